'''
MIT License

Copyright (c) 2024 fsbridge contributors

Permission is hereby granted, free of charge, to any person obtaining a copy
of this software and associated documentation files (the "Software"), to deal
in the Software without restriction, including without limitation the rights
to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
copies of the Software, and to permit persons to whom the Software is
furnished to do so, subject to the following conditions:

The above copyright notice and this permission notice shall be included in all
copies or substantial portions of the Software.

THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
SOFTWARE.
'''

"""Strict INI run configuration.

A run file has up to four sections, ``[process]``, ``[train]``, ``[data]``
and ``[eval]``. Every key is checked against ``SCHEMA``: unknown sections,
unknown keys and unparsable values raise ``ConfigError``. Flag overrides of
the form ``section.key=value`` go through the same checks.
"""
import configparser
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

from fsbridge.errors import ConfigError
from fsbridge.models.control_params import ControlArch
from fsbridge.models.training import BayesConfig, BMConfig, LRSchedule
from fsbridge.models.trajectory import SchemeKind, StepScheme

logger = logging.getLogger(__name__)

RESOLVED_CONFIG_NAME = "config.resolved.ini"

BASIS_KINDS = ('cosine', 'kernel')
DATASETS = ('quadratic', 'density2d', 'gp')
ARCH_PRESETS = ('small', 'default')


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        value = text.strip()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return value
    return parse


def _scheme(text: str) -> str:
    """Step rule name; ``euler`` is accepted for ``euler-maruyama``."""
    try:
        return str(SchemeKind(text.strip()))
    except ValueError:
        raise ValueError(f"expected one of {', '.join(str(k) for k in SchemeKind)}") from None


def _int_list(text: str) -> Tuple[int, ...]:
    return tuple(int(part) for part in text.split(',') if part.strip())


def _float_list(text: str) -> Tuple[float, ...]:
    return tuple(float(part) for part in text.split(',') if part.strip())


def _optional_float(text: str) -> Optional[float]:
    return None if not text.strip() else float(text)


def _params(text: str) -> Dict[str, str]:
    """``name:value`` pairs separated by commas."""
    out = {}
    for part in text.split(','):
        if not part.strip():
            continue
        name, sep, value = part.partition(':')
        if not sep or not name.strip():
            raise ValueError(f"expected name:value, got {part!r}")
        out[name.strip()] = value.strip()
    return out


def _positive(parse: Callable[[str], float]) -> Callable[[str], float]:
    def check(text: str):
        value = parse(text)
        if not value > 0:
            raise ValueError("must be positive")
        return value
    return check


def _non_negative(parse: Callable[[str], float]) -> Callable[[str], float]:
    def check(text: str):
        value = parse(text)
        if value < 0:
            raise ValueError("must be non-negative")
        return value
    return check


# section -> key -> (parser, default text)
SCHEMA: Dict[str, Dict[str, Tuple[Callable[[str], object], str]]] = {
    'process': {
        'sigma': (_non_negative(float), '1.0'),
        'T': (_positive(float), '1.0'),
        'basis_kind': (_choice(*BASIS_KINDS), 'kernel'),
        'modes': (_non_negative(int), '0'),
        'gamma': (_positive(float), '0.2'),
        'resolution': (_int_list, '100'),
        'bounds': (_float_list, '-1.0,1.0'),
        'decay_floor': (_positive(float), '0.001'),
        'jitter': (_optional_float, ''),
    },
    'train': {
        'iters': (_positive(int), '20000'),
        'batch': (_positive(int), '64'),
        'lr': (_positive(float), '0.0005'),
        'ema': (_non_negative(float), '0.999'),
        'steps': (_positive(int), '30'),
        'seed': (_non_negative(int), '0'),
        'scheme': (_scheme, 'euler-maruyama'),
        'checkpoint_every': (_non_negative(int), '0'),
        'log_every': (_non_negative(int), '100'),
        'learnable_x0': (_bool, 'false'),
        'lr_schedule': (_choice(*(str(s) for s in LRSchedule)), 'constant'),
        'arch': (_choice(*ARCH_PRESETS), 'default'),
        'simulate_paths': (_bool, 'false'),
    },
    'data': {
        'dataset': (_choice(*DATASETS), 'quadratic'),
        'params': (_params, ''),
        'task': (str, ''),
        'n_samples': (_positive(int), '1000'),
    },
    'eval': {
        'repeats': (_positive(int), '100'),
        'n': (_positive(int), '256'),
        'alpha': (_positive(float), '0.05'),
        'permutations': (_positive(int), '200'),
    },
}


def _parse(section: str, key: str, text: str):
    if section not in SCHEMA:
        raise ConfigError("Unknown config section", f"[{section}]; known: {', '.join(SCHEMA)}")
    if key not in SCHEMA[section]:
        raise ConfigError("Unknown config key", f"{section}.{key}; known: {', '.join(SCHEMA[section])}")
    parser, _ = SCHEMA[section][key]
    try:
        return parser(text)
    except ValueError as exc:
        raise ConfigError("Invalid config value", f"{section}.{key} = {text!r}: {exc}")


@dataclass
class RunConfig:
    """Resolved run configuration: the raw text of every key plus parsed values."""
    raw: Dict[str, Dict[str, str]] = field(default_factory=lambda: {
        section: {key: default for key, (_, default) in keys.items()} for section, keys in SCHEMA.items()
    })
    values: Dict[str, Dict[str, object]] = field(default_factory=dict)
    source: Optional[str] = None

    def __post_init__(self):
        self.values = {section: {key: _parse(section, key, text) for key, text in keys.items()}
                       for section, keys in self.raw.items()}

    def set(self, section: str, key: str, text: str) -> None:
        value = _parse(section, key, text)
        self.raw[section][key] = text
        self.values[section][key] = value

    def get(self, section: str, key: str):
        return self.values[section][key]

    @property
    def process(self) -> Dict[str, object]:
        return self.values['process']

    @property
    def train(self) -> Dict[str, object]:
        return self.values['train']

    @property
    def data(self) -> Dict[str, object]:
        return self.values['data']

    @property
    def eval(self) -> Dict[str, object]:
        return self.values['eval']

    @property
    def seed(self) -> int:
        return int(self.train['seed'])

    def data_param(self, name: str, default, cast: Callable = float):
        value = self.data['params'].get(name)
        if value is None:
            return default
        try:
            return cast(value)
        except ValueError:
            raise ConfigError("Invalid data parameter", f"{name}:{value}")

    def scheme(self) -> StepScheme:
        return StepScheme(kind=SchemeKind(self.train['scheme']), n_steps=int(self.train['steps']))

    def arch(self, dims: int) -> ControlArch:
        return ControlArch.preset(self.train['arch'], dims)

    def bm_config(self) -> BMConfig:
        t = self.train
        if not t['ema'] < 1.0:
            raise ConfigError("Invalid config value", f"train.ema = {t['ema']}: must be below 1")
        return BMConfig(batch_size=t['batch'], n_iters=t['iters'], lr=t['lr'], ema_rate=t['ema'],
                        scheme=self.scheme(), seed=t['seed'], simulate_paths=t['simulate_paths'],
                        lr_schedule=LRSchedule(t['lr_schedule']), checkpoint_every=t['checkpoint_every'],
                        log_every=t['log_every'])

    def bayes_config(self) -> BayesConfig:
        t = self.train
        return BayesConfig(batch_size=t['batch'], n_iters=t['iters'], lr=t['lr'], scheme=self.scheme(),
                           learnable_x0=t['learnable_x0'], seed=t['seed'],
                           lr_schedule=LRSchedule(t['lr_schedule']), checkpoint_every=t['checkpoint_every'],
                           log_every=t['log_every'])

    def to_ini(self) -> str:
        lines: List[str] = []
        for section, keys in self.raw.items():
            lines.append(f"[{section}]")
            lines.extend(f"{key} = {text}" for key, text in keys.items())
            lines.append("")
        return "\n".join(lines)

    def write(self, path: str) -> str:
        with open(path, 'w') as handle:
            handle.write(self.to_ini())
        return path


def _parser() -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str  # keys are case-sensitive ('T')
    return parser


def parse_overrides(overrides: Iterable[str]) -> List[Tuple[str, str, str]]:
    """Split ``section.key=value`` strings."""
    out = []
    for item in overrides or ():
        target, sep, value = item.partition('=')
        section, dot, key = target.strip().partition('.')
        if not sep or not dot or not section or not key:
            raise ConfigError("Invalid override", f"{item!r}; expected section.key=value")
        out.append((section, key, value.strip()))
    return out


def load_config(path: Optional[str] = None, overrides: Iterable[str] = (), text: Optional[str] = None) -> RunConfig:
    """Read a run file (or ``text``) on top of the defaults and apply overrides.

    Raises:
        ConfigError: On syntax errors, unknown sections or keys, or bad values.
        FileNotFoundError: If ``path`` does not exist.
    """
    overrides = list(overrides or ())
    config = RunConfig(source=path)
    if path is not None or text is not None:
        parser = _parser()
        try:
            if path is not None:
                with open(path) as handle:
                    parser.read_file(handle, source=path)
            else:
                parser.read_string(text)
        except configparser.Error as exc:
            raise ConfigError("Malformed config file", str(exc))
        for section in parser.sections():
            for key, value in parser.items(section):
                config.set(section, key, value)
    for section, key, value in parse_overrides(overrides):
        config.set(section, key, value)
    logger.debug(f"Resolved config from {path or 'defaults'} with {len(overrides)} override(s)")
    return config
