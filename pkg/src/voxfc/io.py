"""File formats: time-series CSVs, voxel coordinates, dataset manifests,
scenario configs and fitted-parameter files.

A dataset is a directory with ``manifest.json`` plus per-participant CSVs.
Region CSVs have a header row of voxel ids followed by one row per time
point; coordinate CSVs have columns ``id,x,y,z``. Floats are written with 17
significant digits so that a write/read cycle is exact.
"""

import csv
from dataclasses import replace
import json
import math
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .covkernels import RegionGeometry, RegionParams
from .crosscorr import PooledTheta
from .errors import DataFormatError, DomainError, SingularityError
from .simulator import HeterogeneitySpec, ParticipantData, SeedSpec

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
FLOAT_FMT = ".17g"


def _f(v):
    return format(float(v), FLOAT_FMT)


# ---------------------------------------------------------------------------
# CSV matrices and coordinates
# ---------------------------------------------------------------------------

def _read_rows(path):
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except FileNotFoundError:
        raise DataFormatError(f"{path}: file not found") from None
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: not valid UTF-8 ({exc})") from None
    rows = [r for r in rows if r]
    if not rows:
        raise DataFormatError(f"{path}: empty file")
    return rows


def _parse_float(cell, path, row, col):
    try:
        v = float(cell)
    except ValueError:
        raise DataFormatError(f"{path}: row {row}, column {col}: non-numeric value {cell!r}") from None
    if not math.isfinite(v):
        raise DataFormatError(f"{path}: row {row}, column {col}: non-finite value {cell!r}")
    return v


def read_matrix_csv(path):
    """Header ids and the ``T x n`` body of a region time-series CSV."""
    rows = _read_rows(path)
    header = [h.strip() for h in rows[0]]
    if len(rows) < 2:
        raise DataFormatError(f"{path}: header but no time points")
    n = len(header)
    body = np.empty((len(rows) - 1, n))
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != n:
            raise DataFormatError(f"{path}: row {i} has {len(r)} columns, expected {n}")
        for j, cell in enumerate(r, start=1):
            body[i - 2, j - 1] = _parse_float(cell, path, i, j)
    return header, body


def read_participant_matrix(path, voxel_ids=None):
    """``T x n`` matrix; if ``voxel_ids`` is given the header must match it in order."""
    header, body = read_matrix_csv(path)
    if voxel_ids is not None:
        voxel_ids = [str(v) for v in voxel_ids]
        for k, (a, b) in enumerate(zip(header, voxel_ids)):
            if a != b:
                raise DataFormatError(f"{path}: voxel id {a!r} at column {k + 1} does not match "
                                      f"coordinate file id {b!r}")
        if len(header) != len(voxel_ids):
            raise DataFormatError(f"{path}: {len(header)} voxel columns but {len(voxel_ids)} coordinates")
    return body


def write_matrix_csv(path, matrix, ids):
    m = np.asarray(matrix, dtype=float)
    ids = [str(i) for i in ids]
    if m.ndim != 2 or m.shape[1] != len(ids):
        raise DomainError("matrix columns must match the number of ids")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ids)
        for row in m:
            w.writerow([_f(v) for v in row])


def read_voxel_coords(path):
    rows = _read_rows(path)
    header = [h.strip().lower() for h in rows[0]]
    if header != ["id", "x", "y", "z"]:
        raise DataFormatError(f"{path}: header must be id,x,y,z, got {','.join(rows[0])}")
    ids, coords = [], []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != 4:
            raise DataFormatError(f"{path}: row {i} has {len(r)} columns, expected 4")
        ids.append(r[0].strip())
        coords.append([_parse_float(c, path, i, j) for j, c in enumerate(r[1:], start=2)])
    if not ids:
        raise DataFormatError(f"{path}: no voxels")
    seen = set()
    for v in ids:
        if v in seen:
            raise DataFormatError(f"{path}: duplicate voxel id {v!r}")
        seen.add(v)
    try:
        return RegionGeometry(np.array(coords), ids=tuple(ids))
    except SingularityError as exc:
        raise SingularityError(f"{path}: {exc}") from None


def write_voxel_coords(path, geom):
    ids = geom.ids if geom.ids is not None else tuple(f"v{j}" for j in range(geom.n))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y", "z"])
        for vid, c in zip(ids, geom.coords):
            w.writerow([vid] + [_f(v) for v in c])


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ManifestParticipant(_Strict):
    id: str
    site: Optional[str] = None
    covariates: Dict[str, float]
    region_files: Dict[str, str]
    voxel_files: Dict[str, str]


class DatasetManifest(_Strict):
    format_version: int
    regions: List[str] = Field(min_length=2, max_length=2)
    covariate_names: List[str] = Field(min_length=1)
    participants: List[ManifestParticipant]
    root: Optional[str] = Field(default=None, exclude=True)

    @field_validator("format_version")
    @classmethod
    def _version(cls, v):
        if v != FORMAT_VERSION:
            raise ValueError(f"unsupported manifest format_version {v} (expected {FORMAT_VERSION})")
        return v

    def validate_content(self):
        names = set(self.covariate_names)
        regions = set(self.regions)
        for p in self.participants:
            if set(p.covariates) != names:
                raise DataFormatError(f"participant {p.id}: covariate names {sorted(p.covariates)} "
                                      f"differ from {sorted(names)}")
            if set(p.region_files) != regions or set(p.voxel_files) != regions:
                raise DataFormatError(f"participant {p.id}: files must be given for regions {sorted(regions)}")
            for f in list(p.region_files.values()) + list(p.voxel_files.values()):
                if not (Path(self.root or ".") / f).is_file():
                    raise DataFormatError(f"participant {p.id}: missing file {f}")
        return self


def _validation_message(exc):
    return "; ".join(f"{'.'.join(str(x) for x in e['loc'])}: {e['msg']}" for e in exc.errors())


def load_manifest(path):
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataFormatError(f"{path}: manifest not found") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from None
    try:
        m = DatasetManifest.model_validate(raw)
    except ValidationError as exc:
        raise DataFormatError(f"{path}: {_validation_message(exc)}") from None
    m.root = str(path.parent)
    return m.validate_content()


def load_participants(manifest, window=None):
    """Read every participant of ``manifest``; ``window=(start, length)`` slices time."""
    root = Path(manifest.root or ".")
    geom_cache = {}

    def geom(rel):
        if rel not in geom_cache:
            geom_cache[rel] = read_voxel_coords(root / rel)
        return geom_cache[rel]

    out = []
    r1, r2 = manifest.regions
    for k, p in enumerate(manifest.participants):
        g1, g2 = geom(p.voxel_files[r1]), geom(p.voxel_files[r2])
        z1 = read_participant_matrix(root / p.region_files[r1], g1.ids)
        z2 = read_participant_matrix(root / p.region_files[r2], g2.ids)
        if z1.shape[0] != z2.shape[0]:
            raise DataFormatError(f"participant {p.id}: regions have different numbers of time points")
        if window is not None:
            start, length = window
            if start < 0 or length < 1 or start + length > z1.shape[0]:
                raise DataFormatError(f"participant {p.id}: window {start},{length} outside 0..{z1.shape[0]}")
            z1, z2 = z1[start:start + length], z2[start:start + length]
        x = np.array([p.covariates[c] for c in manifest.covariate_names])
        out.append(ParticipantData(k, z1, z2, x, p.site, g1, g2))
    return out


def write_dataset(out_dir, participants, covariate_names, regions=("roi1", "roi2"), ids=None):
    """Write participants as CSV files plus a manifest; geometries shared by identity are written once."""
    out = Path(out_dir)
    (out / "series").mkdir(parents=True, exist_ok=True)
    (out / "voxels").mkdir(parents=True, exist_ok=True)
    geom_files = {}

    def gfile(g, region, pid):
        key = id(g)
        if key not in geom_files:
            rel = f"voxels/{region}_{pid}.csv"
            write_voxel_coords(out / rel, g)
            geom_files[key] = rel
        return geom_files[key]

    entries = []
    for k, p in enumerate(participants):
        pid = str(ids[k]) if ids is not None else f"sub{p.id:05d}"
        rf, vf = {}, {}
        for region, z, g in ((regions[0], p.z1, p.geom1), (regions[1], p.z2, p.geom2)):
            if g is None:
                raise DomainError("participants need geometry to be written")
            vf[region] = gfile(g, region, pid)
            vids = g.ids if g.ids is not None else [f"v{j}" for j in range(g.n)]
            rel = f"series/{pid}_{region}.csv"
            write_matrix_csv(out / rel, z, vids)
            rf[region] = rel
        cov = {name: float(v) for name, v in zip(covariate_names, np.asarray(p.covariates, dtype=float))}
        entries.append({"id": pid, "site": p.site, "covariates": cov, "region_files": rf, "voxel_files": vf})
    manifest = {"format_version": FORMAT_VERSION, "regions": list(regions),
                "covariate_names": list(covariate_names), "participants": entries}
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return out / MANIFEST_NAME


# ---------------------------------------------------------------------------
# Fitted parameters
# ---------------------------------------------------------------------------

def _params_dict(r):
    return {k: float(v) for k, v in r.as_dict().items()}


def theta_to_dict(theta):
    return {"region1": _params_dict(theta.region1), "region2": _params_dict(theta.region2),
            "phi": float(theta.phi)}


def theta_from_dict(d):
    try:
        r1 = RegionParams.normalized(**d["region1"])
        r2 = RegionParams.normalized(**d["region2"])
        return PooledTheta(r1, r2, float(d["phi"]))
    except (KeyError, TypeError) as exc:
        raise DataFormatError(f"malformed theta entry: {exc}") from None


def write_theta(path, thetas):
    """``thetas`` maps a site label (``None`` for all participants) to a PooledTheta."""
    doc = {"format_version": FORMAT_VERSION,
           "sites": {("*" if k is None else str(k)): theta_to_dict(v) for k, v in thetas.items()}}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def read_theta(path):
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataFormatError(f"{path}: theta file not found") from None
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: invalid JSON ({exc})") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"{path}: unsupported format_version {doc.get('format_version')}")
    sites = doc.get("sites")
    if not isinstance(sites, dict) or not sites:
        raise DataFormatError(f"{path}: no 'sites' mapping")
    return {(None if k == "*" else k): theta_from_dict(v) for k, v in sites.items()}


# ---------------------------------------------------------------------------
# Scenario configuration
# ---------------------------------------------------------------------------

class RegionParamsModel(_Strict):
    lambda2: float
    sigma2: float
    tau2: float
    psi: float
    phi: float


class ScenarioFile(_Strict):
    preset: Optional[str] = None
    name: Optional[str] = None
    N: Optional[int] = Field(default=None, ge=1)
    n1: Optional[int] = Field(default=None, ge=1)
    n2: Optional[int] = Field(default=None, ge=1)
    T: Optional[int] = Field(default=None, ge=1)
    beta: Optional[List[float]] = None
    region1: Optional[RegionParamsModel] = None
    region2: Optional[RegionParamsModel] = None
    covariate_design: Optional[str] = None
    alpha: Optional[float] = Field(default=None, ge=0)
    heterogeneity_targets: Optional[List[str]] = None
    replicates: Optional[int] = Field(default=None, ge=1)
    n_boot: Optional[int] = Field(default=None, ge=0)
    methods: Optional[List[str]] = None
    seed: Optional[int] = None
    standardize: Optional[bool] = None
    step1_method: Optional[str] = None


def scenario_from_mapping(doc, source="<mapping>"):
    from .simharness import ScenarioConfig, preset

    try:
        f = ScenarioFile.model_validate(doc)
    except ValidationError as exc:
        raise DataFormatError(f"{source}: {_validation_message(exc)}") from None
    base = preset(f.preset) if f.preset else None
    if base is None and any(v is None for v in (f.N, f.n1, f.n2, f.T)):
        raise DataFormatError(f"{source}: give a preset or all of N, n1, n2, T")
    kw = {}
    for key in ("name", "N", "n1", "n2", "T", "covariate_design", "replicates", "n_boot",
                "standardize", "step1_method"):
        v = getattr(f, key)
        if v is not None:
            kw[key] = v
    if f.beta is not None:
        kw["beta"] = tuple(f.beta)
    if f.methods is not None:
        kw["methods"] = tuple(f.methods)
    for key in ("region1", "region2"):
        v = getattr(f, key)
        if v is not None:
            kw[key] = RegionParams(**v.model_dump())
    if f.alpha is not None or f.heterogeneity_targets is not None:
        alpha = f.alpha if f.alpha is not None else 0.0
        targets = f.heterogeneity_targets
        kw["heterogeneity"] = (HeterogeneitySpec(alpha) if targets is None
                               else HeterogeneitySpec(alpha, frozenset(targets)))
    if f.seed is not None:
        kw["seed"] = SeedSpec(f.seed)
    if base is None:
        kw.setdefault("name", "custom")
        return ScenarioConfig(**kw)
    return replace(base, **kw)


def load_scenario_config(path):
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataFormatError(f"{path}: scenario file not found") from None
    except yaml.YAMLError as exc:
        raise DataFormatError(f"{path}: invalid YAML ({exc})") from None
    if not isinstance(doc, dict):
        raise DataFormatError(f"{path}: top level must be a mapping")
    return scenario_from_mapping(doc, str(path))


# ---------------------------------------------------------------------------
# Metrics output
# ---------------------------------------------------------------------------

METRIC_COLUMNS = ("scenario", "method", "parameter", "alpha", "n_replicates", "n_failed",
                  "bias", "se_bias", "se", "rmse", "coverage")


def write_metrics_csv(path, rows):
    """Accuracy metrics only; wall-clock timings go to :func:`write_timings_csv`."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in rows:
            vals = []
            for c in METRIC_COLUMNS:
                v = getattr(r, c)
                vals.append(_f(v) if isinstance(v, float) else str(v))
            w.writerow(vals)


def read_metrics_csv(path):
    rows = _read_rows(path)
    if tuple(rows[0]) != METRIC_COLUMNS:
        raise DataFormatError(f"{path}: unexpected metrics header")
    out = []
    for r in rows[1:]:
        d = dict(zip(METRIC_COLUMNS, r))
        for c in ("alpha", "bias", "se_bias", "se", "rmse", "coverage"):
            d[c] = float(d[c])
        for c in ("n_replicates", "n_failed"):
            d[c] = int(d[c])
        out.append(d)
    return out


def write_timings_csv(path, rows):
    seen = {}
    for r in rows:
        seen.setdefault((r.scenario, r.method), (r.mean_runtime_step1, r.mean_runtime_step2))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario", "method", "mean_runtime_step1", "mean_runtime_step2"])
        for (sc, m), (a, b) in seen.items():
            w.writerow([sc, m, _f(a), _f(b)])
