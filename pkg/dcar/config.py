import os
from dataclasses import dataclass, fields, replace
from typing import Any, Dict, Mapping, Optional, Tuple

from dotenv import dotenv_values, load_dotenv

from dcar.models.errors import ConfigError

# Load environment variables from .env file
load_dotenv()

# Phase 1: per-track GMM
COMPONENTS = int(os.getenv('DCAR_COMPONENTS', 4))
EM_TOLERANCE = float(os.getenv('DCAR_EM_TOLERANCE', 1e-6))
EM_MAX_ITER = int(os.getenv('DCAR_EM_MAX_ITER', 200))

# Phase 2: affinity graph and embedding
REDUCED_DIM = int(os.getenv('DCAR_REDUCED_DIM', 30))
LAMBDA = float(os.getenv('DCAR_LAMBDA', 1.0))
NEIGHBORS = int(os.getenv('DCAR_NEIGHBORS', 5))
OPT_MAX_ITERS = int(os.getenv('DCAR_OPT_MAX_ITERS', 100))
OPT_TOLERANCE = float(os.getenv('DCAR_OPT_TOLERANCE', 1e-8))

# Classifier
ALPHA = float(os.getenv('DCAR_ALPHA', 1.0))

# Seeds
GMM_SEED = int(os.getenv('DCAR_GMM_SEED', 0))
INIT_SEED = int(os.getenv('DCAR_INIT_SEED', 0))
SYNTH_SEED = int(os.getenv('DCAR_SYNTH_SEED', 0))
CV_SEED = int(os.getenv('DCAR_CV_SEED', 0))

# Runtime
JOBS = int(os.getenv('DCAR_JOBS', 1))
LOG_LEVEL = os.getenv('DCAR_LOG_LEVEL', 'INFO')
FEATURES_DIR = os.getenv('DCAR_FEATURES_DIR', 'features')

# Tuning grids (cross-validation ranges of the reference experiments)
COMPONENT_GRID = tuple(range(1, 11))
LAMBDA_GRID = tuple(10.0 ** k for k in range(-2, 3))
ALPHA_GRID = tuple(10.0 ** k for k in range(-3, 2))
REDUCED_DIM_STEP = 5
MAX_REDUCED_DIM = 60

METHODS = ('dcar', 'gmm', 'mv')


def reduced_dim_grid(n_events, max_dim=MAX_REDUCED_DIM):
    """r is tuned in [L, max_dim] with a step of 5."""
    return tuple(range(n_events, max_dim + 1, REDUCED_DIM_STEP))


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one experiment. Keys of the config file map onto fields."""

    method: str = 'dcar'
    # GMM_*
    gmm_components: int = COMPONENTS
    gmm_tolerance: float = EM_TOLERANCE
    gmm_max_iter: int = EM_MAX_ITER
    # AFFINITY_*
    affinity_within: int = NEIGHBORS
    affinity_between: int = NEIGHBORS
    affinity_bandwidth: str = 'self-tuning'
    affinity_exclude_same_track: bool = False
    # OPT_*
    opt_reduced_dim: int = REDUCED_DIM
    opt_lambda: float = LAMBDA
    opt_max_iters: int = OPT_MAX_ITERS
    opt_tolerance: float = OPT_TOLERANCE
    opt_init: str = 'random'
    opt_log_derivative: str = 'exact'
    # KRR_*
    krr_alpha: float = ALPHA
    krr_sigma_mean: Optional[float] = None
    krr_sigma_cov: Optional[float] = None
    # FEATURES_*
    features_pca_dim: Optional[int] = None
    features_normalize: bool = False
    features_dir: str = FEATURES_DIR
    # CV_*
    cv_folds: int = 5
    cv_components: Tuple[int, ...] = COMPONENT_GRID
    cv_reduced_dims: Optional[Tuple[int, ...]] = None
    cv_lambdas: Tuple[float, ...] = LAMBDA_GRID
    cv_alphas: Tuple[float, ...] = ALPHA_GRID
    # SEED_*
    seed_gmm: int = GMM_SEED
    seed_init: int = INIT_SEED
    seed_synth: int = SYNTH_SEED
    seed_cv: int = CV_SEED

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"METHOD must be one of {', '.join(METHODS)}, got {self.method!r}")
        if self.gmm_components < 1:
            raise ConfigError("GMM_COMPONENTS must be >= 1")
        if self.affinity_within < 1 or self.affinity_between < 1:
            raise ConfigError("AFFINITY_WITHIN and AFFINITY_BETWEEN must be >= 1")
        if self.affinity_bandwidth not in ('self-tuning', 'global'):
            raise ConfigError("AFFINITY_BANDWIDTH must be 'self-tuning' or 'global'")
        if self.opt_reduced_dim < 1:
            raise ConfigError("OPT_REDUCED_DIM must be >= 1")
        if self.features_pca_dim is not None and self.features_pca_dim < 1:
            raise ConfigError("FEATURES_PCA_DIM must be >= 1")
        if self.method == 'dcar' and self.features_pca_dim and self.opt_reduced_dim >= self.features_pca_dim:
            raise ConfigError(f"OPT_REDUCED_DIM={self.opt_reduced_dim} must be below "
                              f"FEATURES_PCA_DIM={self.features_pca_dim}")
        if self.opt_lambda <= 0 or self.krr_alpha <= 0:
            raise ConfigError("OPT_LAMBDA and KRR_ALPHA must be > 0")
        if self.opt_tolerance <= 0 or self.gmm_tolerance <= 0:
            raise ConfigError("tolerances must be > 0")
        if self.opt_init not in ('random', 'pca'):
            raise ConfigError("OPT_INIT must be 'random' or 'pca'")
        if self.opt_log_derivative not in ('exact', 'inverse'):
            raise ConfigError("OPT_LOG_DERIVATIVE must be 'exact' or 'inverse'")
        if self.cv_folds < 2:
            raise ConfigError("CV_FOLDS must be >= 2")

    def with_overrides(self, **overrides):
        """Copy with the given fields replaced; None values are ignored."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        try:
            return replace(self, **changes)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def to_mapping(self) -> Dict[str, str]:
        """Render as config-file keys, inverse of :func:`load_config`."""
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                continue
            out[f.name.upper()] = _format_value(value)
        return out


def _format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(raw: str, default: Any, name: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() not in ('true', 'false', '1', '0', 'yes', 'no'):
                raise ValueError(raw)
            return raw.lower() in ('true', '1', 'yes')
        if name.startswith('cv_') and name != 'cv_folds':
            cast = float if name in ('cv_lambdas', 'cv_alphas') else int
            return tuple(cast(v) for v in raw.split(',') if v.strip())
        if name in ('krr_sigma_mean', 'krr_sigma_cov'):
            return float(raw)
        if name == 'features_pca_dim':
            return int(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"Invalid value for {name.upper()}: {raw!r}") from e


def parse_config(values: Mapping[str, Optional[str]], base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """
    Build an ExperimentConfig from string key/value pairs

    Args:
        values: mapping of upper-case config keys to raw strings
        base: configuration to start from (defaults to built-in defaults)

    Returns:
        ExperimentConfig: the merged configuration
    """
    base = base or ExperimentConfig()
    known = {f.name: f for f in fields(ExperimentConfig)}
    changes = {}
    for key, raw in values.items():
        name = key.strip().lower()
        if name not in known:
            raise ConfigError(f"Unknown config key: {key}")
        if raw is None or raw.strip() == '':
            continue
        changes[name] = _parse_value(raw, getattr(base, name), name)
    return base.with_overrides(**changes)


def load_config(path: Optional[str] = None, base: Optional[ExperimentConfig] = None) -> ExperimentConfig:
    """Read a key = value experiment file; no path means defaults only."""
    if path is None:
        return base or ExperimentConfig()
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    return parse_config(dotenv_values(path), base)


def save_config(config: ExperimentConfig, path: str) -> None:
    with open(path, 'w') as f:
        for key, value in config.to_mapping().items():
            f.write(f"{key}={value}\n")
