import os
import dataclasses
import logging
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple, Union, get_args, get_origin, get_type_hints

from dotenv import load_dotenv

from errors import ConfigurationError

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)


class Config:
    # Logging
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

    # Run registry
    DATABASE_URL = os.getenv('DATABASE_URL', 'sqlite:///courtformer_runs.db')

    # Seed fallback when neither --seed nor the run config sets one
    DEFAULT_SEED = int(os.getenv('COURTFORMER_SEED', 0))

    OUTPUT_DIR = os.getenv('COURTFORMER_OUTPUT_DIR', 'runs')

    # Tracking files written by `synth` and read by every other command
    GAME_FILE_SUFFIX = '.track'
    RESOLVED_CONFIG_NAME = 'resolved_config.txt'


def parse_key_value_text(text: str, source: str = "<config>") -> Dict[str, str]:
    """Parse flat `key = value` text; `#` starts a comment."""
    values = {}
    for line_number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigurationError(f"{source}:{line_number}: expected 'key = value', got {raw_line!r}")
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigurationError(f"{source}:{line_number}: empty key")
        if key in values:
            raise ConfigurationError(f"{source}:{line_number}: duplicate key '{key}'")
        values[key] = value
    return values


def parse_overrides(pairs: List[str]) -> Dict[str, str]:
    """Turn repeated `--set key=value` arguments into a dict."""
    overrides = {}
    for pair in pairs or []:
        if '=' not in pair:
            raise ConfigurationError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split('=', 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _coerce(value: str, annotation: Any, key: str) -> Any:
    origin = get_origin(annotation)
    if origin is Union:
        inner = [arg for arg in get_args(annotation) if arg is not type(None)]
        if value.lower() in ('', 'none'):
            return None
        return _coerce(value, inner[0], key)
    if origin in (tuple, Tuple):
        item_type = get_args(annotation)[0]
        items = [item.strip() for item in value.split(',') if item.strip()]
        return tuple(_coerce(item, item_type, key) for item in items)
    try:
        if annotation is bool:
            lowered = value.lower()
            if lowered in ('true', 'yes', '1', 'on'):
                return True
            if lowered in ('false', 'no', '0', 'off'):
                return False
            raise ValueError(value)
        if annotation is int:
            return int(value)
        if annotation is float:
            return float(value)
    except ValueError:
        raise ConfigurationError(f"key '{key}': cannot read {value!r} as {annotation.__name__}")
    return value


def _render(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, tuple):
        return ','.join(_render(item) for item in value)
    if value is None:
        return 'none'
    if isinstance(value, float):
        return repr(value)
    return str(value)


def build_dataclass(cls, values: Dict[str, str], source: str = "<config>"):
    """Instantiate a config dataclass from string values, rejecting unknown keys."""
    hints = get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"{source}: unknown keys: {', '.join(unknown)}")
    kwargs = {key: _coerce(value, hints[key], key) for key, value in values.items()}
    return cls(**kwargs)


def render_dataclass(instance) -> str:
    lines = [f"{f.name} = {_render(getattr(instance, f.name))}" for f in dataclasses.fields(instance)]
    return '\n'.join(lines) + '\n'


def read_key_value_file(path: str) -> Dict[str, str]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return parse_key_value_text(f.read(), source=path)
    except OSError as e:
        raise ConfigurationError(f"cannot read config file {path}: {e}")


def load_dataclass_file(cls, path: Optional[str], overrides: Optional[Dict[str, str]] = None):
    values = read_key_value_file(path) if path else {}
    values.update(overrides or {})
    return build_dataclass(cls, values, source=path or "<overrides>")


@dataclass
class RunConfig:
    """Everything one command needs: model, training and data settings."""
    seed: int = 0
    data_dir: str = 'data/league'
    output_dir: str = 'runs/latest'

    # model
    model_kind: str = 'baller2vec'
    task: str = 'P'
    d_model: int = 64
    heads: int = 4
    d_ff: int = 128
    layers: int = 2
    embedding_dim: int = 8
    player_mlp: Tuple[int, ...] = (16, 32, 64)
    ball_mlp: Tuple[int, ...] = (16, 32, 64)
    league_size: int = 40
    use_identity: bool = True
    grnn_d_ff: int = 0
    dtype: str = 'float32'
    player_bins: int = 11
    player_extent: float = 11.0
    ball_bins: int = 19
    ball_extent: float = 19.0

    # data protocol
    sequence_steps: int = 20
    rotate_probability: float = 0.5
    eval_target: int = 200

    # training
    samples_per_epoch: int = 2000
    max_epochs: int = 30
    max_seconds: float = 0.0
    learning_rate: float = 1e-3
    reduced_learning_rate: float = 1e-4
    patience: int = 5
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-9

    @classmethod
    def load(cls, path: Optional[str] = None, overrides: Optional[Dict[str, str]] = None,
             seed: Optional[int] = None) -> 'RunConfig':
        values = read_key_value_file(path) if path else {}
        values.update(overrides or {})
        if seed is not None:
            values['seed'] = str(seed)
        elif 'seed' not in values:
            values['seed'] = str(Config.DEFAULT_SEED)
        return build_dataclass(cls, values, source=path or "<overrides>")

    def to_text(self) -> str:
        return render_dataclass(self)

    def write(self, directory: str) -> str:
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, Config.RESOLVED_CONFIG_NAME)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(self.to_text())
        logger.debug(f"Wrote resolved config to {path}")
        return path

    def model_config(self):
        from model import ModelConfig
        return ModelConfig(
            d_model=self.d_model,
            heads=self.heads,
            d_ff=self.d_ff,
            layers=self.layers,
            embedding_dim=self.embedding_dim,
            player_mlp=tuple(self.player_mlp),
            ball_mlp=tuple(self.ball_mlp),
            league_size=self.league_size,
            task=self.task,
            use_identity=self.use_identity,
            grnn_d_ff=self.grnn_d_ff or None,
            dtype=self.dtype,
            player_bins=self.player_bins,
            player_extent=self.player_extent,
            ball_bins=self.ball_bins,
            ball_extent=self.ball_extent,
            seed=self.seed,
        )

    def train_config(self):
        from harness import TrainConfig
        return TrainConfig(
            samples_per_epoch=self.samples_per_epoch,
            max_epochs=self.max_epochs,
            max_seconds=self.max_seconds or None,
            learning_rate=self.learning_rate,
            reduced_learning_rate=self.reduced_learning_rate,
            patience=self.patience,
            batch_size=self.batch_size,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.adam_epsilon,
            seed=self.seed,
            sequence_steps=self.sequence_steps,
            rotate_probability=self.rotate_probability,
        )
