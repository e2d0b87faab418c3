"""Voxel-level functional connectivity: simulation, two-step estimation and competitors."""

from .covkernels import RegionGeometry, RegionParams, VoxelLocation
from .crosscorr import CorrSummary, PooledTheta, empirical_corr, m_factor
from .estimator import (FitResult, Step1Fit, bootstrap_se, pool_theta, step1_fit, step2_fit,
                        two_step_fit, wald_ci)
from .simulator import (CovariateRow, HeterogeneitySpec, ParticipantData, SeedSpec, TrueModel,
                        simulate_dataset, simulate_participant)

__version__ = "0.1.0"

__all__ = [
    "CorrSummary", "CovariateRow", "FitResult", "HeterogeneitySpec", "ParticipantData", "PooledTheta",
    "RegionGeometry", "RegionParams", "SeedSpec", "Step1Fit", "TrueModel", "VoxelLocation",
    "bootstrap_se", "empirical_corr", "m_factor", "pool_theta", "simulate_dataset",
    "simulate_participant", "step1_fit", "step2_fit", "two_step_fit", "wald_ci",
]
