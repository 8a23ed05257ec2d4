"""
Run settings.

Values are resolved from built-in defaults, then a named profile, then a TOML file
of flat `key = value` pairs, then command line flags. Every key can be set at every
level; unknown keys are rejected.
"""
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any

from errors import InvalidArgument
from models import AffinityConfig, AffinityMode, ClosureMode, LossMode, NetConfig, TrainConfig

__all__ = ['Settings', 'PROFILES', 'THREADS_ENV', 'load_config_file', 'resolve_settings']

logger = logging.getLogger(__name__)

THREADS_ENV = 'LPI_THREADS'


@dataclass(frozen=True)
class Settings:
    # Geometry
    regions: int = 100
    geodesic_k: int = 10
    cache_dir: str = ''
    # Affinity
    affinity: str = AffinityMode.EUCLIDEAN.value
    sigma: float = 1.0
    own_weight: float = 0.8
    # Network
    latent_dim: int = 100
    hidden_width: int = 256
    n_layers: int = 8
    skip_layer: int = 4
    softplus_beta: float = 100.0
    init_radius: float = 0.3
    # Training
    loss: str = LossMode.PULLING.value
    steps: int = 20000
    batch: int = 512
    lr: float = 1e-4
    queries_per_point: int = 20
    noise_k: int = 50
    seed: int = 0
    log_every: int = 100
    # Extraction and evaluation
    resolution: int = 128
    closure: str = ClosureMode.CONSTANT.value
    mu: float = 0.002
    eval_samples: int = 10000
    iou_resolution: int = 64
    threads: int = 0  # 0 uses every core

    def net_config(self) -> NetConfig:
        return NetConfig(
            latent_dim=self.latent_dim,
            hidden_width=self.hidden_width,
            n_layers=self.n_layers,
            skip_layer=self.skip_layer,
            softplus_beta=self.softplus_beta,
            init_radius=self.init_radius
        )

    def affinity_config(self) -> AffinityConfig:
        return AffinityConfig(AffinityMode(self.affinity), self.sigma, self.own_weight)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            steps=self.steps,
            batch_size=self.batch,
            learning_rate=self.lr,
            loss=LossMode(self.loss),
            queries_per_point=self.queries_per_point,
            noise_k=self.noise_k,
            seed=self.seed,
            log_every=self.log_every
        )

    @property
    def n_jobs(self) -> int | None:
        return self.threads or None

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


PROFILES: dict[str, dict[str, Any]] = {
    'full': {},
    'desk': {'latent_dim': 32, 'regions': 16, 'steps': 2000, 'resolution': 64},
}

CHOICES = {
    'affinity': [mode.value for mode in AffinityMode],
    'loss': [mode.value for mode in LossMode],
    'closure': [mode.value for mode in ClosureMode],
}

_FIELDS = {f.name: f for f in fields(Settings)}


def _check_value(key: str, value: Any, source: str) -> Any:
    if key not in _FIELDS:
        raise InvalidArgument(f'Unknown setting "{key}" in {source}')
    expected = type(_FIELDS[key].default)
    if expected is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if type(value) is not expected:
        raise InvalidArgument(f'Setting "{key}" in {source} must be {expected.__name__}, got {value!r}')
    if key in CHOICES and value not in CHOICES[key]:
        raise InvalidArgument(f'Setting "{key}" in {source} must be one of {CHOICES[key]}, got {value!r}')
    return value


def _apply(settings: Settings, values: dict[str, Any], source: str) -> Settings:
    checked = {key.replace('-', '_'): value for key, value in values.items()}
    checked = {key: _check_value(key, value, source) for key, value in checked.items()}
    return replace(settings, **checked)


def load_config_file(path: str | Path) -> dict[str, Any]:
    try:
        with open(path, 'rb') as stream:
            return tomllib.load(stream)
    except OSError as e:
        raise InvalidArgument(f'Cannot read config file {path}: {e}') from e
    except tomllib.TOMLDecodeError as e:
        raise InvalidArgument(f'Bad config file {path}: {e}') from e


def resolve_settings(
        profile: str | None = None,
        config_path: str | Path | None = None,
        overrides: dict[str, Any] | None = None
) -> Settings:
    """Defaults < profile < LPI_THREADS < config file < flags. `overrides` holds only flags actually given."""
    settings = Settings()
    if profile is not None:
        if profile not in PROFILES:
            raise InvalidArgument(f'Unknown profile "{profile}"; choose from {sorted(PROFILES)}')
        settings = _apply(settings, PROFILES[profile], f'profile {profile}')
    if os.environ.get(THREADS_ENV):
        try:
            settings = replace(settings, threads=int(os.environ[THREADS_ENV]))
        except ValueError as e:
            raise InvalidArgument(f'{THREADS_ENV} must be an integer, got {os.environ[THREADS_ENV]!r}') from e
    if config_path is not None:
        settings = _apply(settings, load_config_file(config_path), str(config_path))
    settings = _apply(settings, overrides or {}, 'command line')

    if settings.threads < 0:
        raise InvalidArgument(f'threads must be non-negative, got {settings.threads}')
    logger.debug(f'Resolved settings: {settings}')
    return settings
