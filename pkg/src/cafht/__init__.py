"""Conformalized adaptive prediction bands for heterogeneous trajectories."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    Interval,
    PredictionBand,
    ShapeError,
    Trajectory,
    TrajectorySet,
    band_width_stats,
    covers_simultaneously,
    empirical_quantile,
)
from .forecaster import ARForecaster, Normalizer, fit_ar, fit_normalizer  # noqa: E402
from .adaptive import AciTracker, PidTracker, WarmStart, make_warm_start, run_aci_band  # noqa: E402
from .conformal import (  # noqa: E402
    CalibratedPredictor,
    additive_score,
    calibrate,
    multiplicative_score,
    predict_band,
)
from .tuning import calibrate_split, calibrate_theory, corrected_level  # noqa: E402
from .multistep import calibrate_multistep, predict_multistep, run_multistep_aci  # noqa: E402
from .baselines import cfrnn_fit, cfrnn_predict, nctp_fit, nctp_predict  # noqa: E402
from .simdata import ArConfig, generate_ar, load_trajectories, split_dataset  # noqa: E402
