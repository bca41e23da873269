"""Online change-point detection with inductive conformal martingales."""

from .betting import (
    BettingConfig,
    KdeWindowBetting,
    PrecomputedDensity,
    calibrate_precomputed,
    constant_bet,
    kde_window_bet,
    mixture_bet,
    precomputed_bet,
)
from .classical import ClassicalDetector, GaussianShiftModel, cusum_step, loglr, pp_step, sr_step
from .core import (
    CalibrationError,
    ConfigError,
    ContractError,
    InputError,
    PrefixMoments,
    RngHandle,
    ScoreBuffer,
)
from .martingale import AlarmResult, IcmDetector, conformal_pvalue, icm_step, run_full_cm, run_icm
from .ncm import NcmConfig, TrainingSet, knn_score, lr_gaussian_score, mean_distance_score
from .oracle import OracleDetector, log_marginal_cp, log_marginal_nocp
from .simgen import DetectorSpec, ExperimentConfig, SweepResult, interpolate_at_fa, run_sweep

__version__ = "0.1.0"
