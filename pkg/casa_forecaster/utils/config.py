"""
Flat `section.key = value` configuration files with command-line overrides.
"""
import os
from dataclasses import MISSING, dataclass, field, fields
from typing import List, Optional

from casa_forecaster.data.pipeline import SplitSpec
from casa_forecaster.exceptions import ConfigError
from casa_forecaster.models.casa import ModelConfig
from casa_forecaster.training.trainer import TrainConfig
from casa_forecaster.utils.parsers import parse_int_list, parse_value

DATA_DIR_ENV = "CASA_DATA_DIR"
RESOLVED_NAME = "resolved_config.cfg"

# Runs train and store at 32-bit unless model.dtype says otherwise
RUN_DEFAULTS = {'model': {'dtype': 'float32'}}


@dataclass
class DataConfig:
    path: str = 'ETTh1.csv'
    date_column: Optional[str] = None
    delimiter: str = ','
    split: str = 'ratio'
    train_ratio: float = 0.7
    val_ratio: float = 0.1
    test_ratio: float = 0.2

    def split_spec(self):
        return SplitSpec(mode=self.split, train=self.train_ratio, val=self.val_ratio,
                         test=self.test_ratio).validate()

    @property
    def name(self):
        return os.path.splitext(os.path.basename(self.path))[0]


@dataclass
class BenchConfig:
    axis: str = 'N'
    values: List[int] = field(default_factory=lambda: [64, 128, 256, 512, 862])
    reps: int = 3
    batch: int = 16
    d_model: int = 32
    scope: str = 'auto'
    backward: bool = False


@dataclass
class GradcheckConfig:
    n_vars: int = 3
    seq_len: int = 8
    pred_len: int = 4
    d_model: int = 8
    n_blocks: int = 1
    kernel_size: int = 3
    batch: int = 2
    eps: float = 1e-5
    tolerance: float = 1e-4


@dataclass
class RunSettings:
    out: str = 'runs/default'


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=lambda: ModelConfig(**RUN_DEFAULTS['model']))
    train: TrainConfig = field(default_factory=TrainConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)
    gradcheck: GradcheckConfig = field(default_factory=GradcheckConfig)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def seed(self):
        return self.train.seed


SECTIONS = {
    'data': DataConfig,
    'model': ModelConfig,
    'train': TrainConfig,
    'bench': BenchConfig,
    'gradcheck': GradcheckConfig,
    'run': RunSettings,
}

ALIASES = {
    'attention': 'model.attention',
    'seed': 'train.seed',
    'run.seed': 'train.seed',
    'run.dtype': 'model.dtype',
    'model.N': 'model.n_vars',
    'model.L': 'model.seq_len',
    'model.H': 'model.pred_len',
    'model.D': 'model.d_model',
    'model.M': 'model.n_blocks',
    'model.k': 'model.kernel_size',
    'model.c_hid': 'model.hidden_channels',
    'bench.D': 'bench.d_model',
    'gradcheck.N': 'gradcheck.n_vars',
    'gradcheck.L': 'gradcheck.seq_len',
    'gradcheck.H': 'gradcheck.pred_len',
    'gradcheck.D': 'gradcheck.d_model',
    'gradcheck.M': 'gradcheck.n_blocks',
    'gradcheck.k': 'gradcheck.kernel_size',
}


def _field_defaults(cls):
    defaults = {}
    for f in fields(cls):
        if f.default is not MISSING:
            defaults[f.name] = f.default
        elif f.default_factory is not MISSING:
            defaults[f.name] = f.default_factory()
    return defaults


def canonical_key(key):
    """Resolve aliases and reject keys no section defines."""
    key = key.strip()
    key = ALIASES.get(key, key)
    section, _, name = key.partition('.')
    if section not in SECTIONS or name not in _field_defaults(SECTIONS[section]):
        raise ConfigError(f"Unknown config key: {key!r}")
    return key


def coerce_value(key, raw):
    """
    Convert a raw string to the type of the field's default.

    Args:
        key: Canonical 'section.field' key
        raw: Raw text

    Returns:
        Typed value
    """
    section, _, name = key.partition('.')
    default = _field_defaults(SECTIONS[section])[name]
    value = parse_value(raw) if isinstance(raw, str) else raw

    if isinstance(default, list):
        return parse_int_list(raw)
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key} expects true/false, got {raw!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key} expects an integer, got {raw!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} expects a number, got {raw!r}")
        return float(value)
    if isinstance(default, str):
        if value is None:
            raise ConfigError(f"{key} expects a value")
        return str(raw).strip() if isinstance(raw, str) else str(value)
    # Optional fields without a typed default keep the parsed scalar
    return value


def parse_config_text(text, source='<config>'):
    """
    Split config text into (key, raw value) pairs.

    Args:
        text: File contents; '#' starts a comment, blank lines are ignored
        source: Name used in error messages

    Returns:
        List of (key, raw value)
    """
    entries = []
    for number, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {line!r}")
        key, raw = line.split('=', 1)
        entries.append((key.strip(), raw.strip()))
    return entries


def parse_override(text):
    if '=' not in text:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    key, raw = text.split('=', 1)
    return key.strip(), raw.strip()


def resolve_data_path(path, environ=None):
    """Relative dataset paths resolve against CASA_DATA_DIR when it is set."""
    environ = os.environ if environ is None else environ
    base = environ.get(DATA_DIR_ENV)
    if path and not os.path.isabs(path) and base:
        return os.path.join(base, path)
    return path


def load_config(path=None, overrides=(), environ=None):
    """
    Build a fully resolved RunConfig.

    Args:
        path: Optional config file
        overrides: Iterable of 'key=value' strings; they win over file values
        environ: Environment mapping (os.environ when None)

    Returns:
        RunConfig, validated
    """
    entries = []
    if path:
        if not os.path.isfile(path):
            raise ConfigError(f"Config file not found: {path}")
        with open(path, encoding='utf-8') as handle:
            entries.extend(parse_config_text(handle.read(), source=path))
    entries.extend(parse_override(item) for item in overrides)

    values = {section: dict(RUN_DEFAULTS.get(section, {})) for section in SECTIONS}
    for key, raw in entries:
        key = canonical_key(key)
        section, _, name = key.partition('.')
        values[section][name] = coerce_value(key, raw)

    try:
        built = {section: cls(**values[section]) for section, cls in SECTIONS.items()}
    except TypeError as e:
        raise ConfigError(str(e))
    config = RunConfig(**built)
    config.data.path = resolve_data_path(config.data.path, environ)
    config.model.validate()
    config.train.validate()
    config.data.split_spec()
    return config


def _format(value):
    if value is None:
        return 'none'
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, list):
        return ','.join(str(v) for v in value)
    return str(value)


def format_config(config):
    """Flat text of every resolved key, one 'section.key = value' per line."""
    lines = []
    for section in SECTIONS:
        record = getattr(config, section)
        for f in fields(record):
            lines.append(f"{section}.{f.name} = {_format(getattr(record, f.name))}")
    return "\n".join(lines) + "\n"


def write_resolved_config(config, output_dir, logger=None, extra=None):
    """
    Write the resolved config next to a run's outputs.

    Args:
        config: RunConfig
        output_dir: Run directory
        logger: Logger instance for logging
        extra: Optional {label: value} written as trailing comments

    Returns:
        Path to the file or None if there was an error
    """
    filepath = os.path.join(output_dir, RESOLVED_NAME)
    try:
        os.makedirs(output_dir, exist_ok=True)
        text = format_config(config)
        for label, value in (extra or {}).items():
            text += f"# {label}: {value}\n"
        with open(filepath, 'w', encoding='utf-8') as handle:
            handle.write(text)
        if logger:
            logger.info(f"Resolved config saved to {filepath}")
        return filepath
    except OSError as e:
        if logger:
            logger.error(f"Error saving {RESOLVED_NAME}: {e}")
        return None
