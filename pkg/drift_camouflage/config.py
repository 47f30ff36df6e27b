import logging
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, Optional, Union

import yaml

from .discrete import BiasedBitLaw, IndexFamily

logger = logging.getLogger(__name__)

CONFIG_FILES = [
    "drift-camouflage.yaml",
    "drift-camouflage.yml",
    "drift-camouflage.json",
]

COMMANDS = ("hidden", "concat", "discrete", "calibrate")
EPSILON_MODES = {"random": None, "plus": 1, "minus": -1}
DEFAULT_CSV_PATHS = 10


@dataclass
class HiddenParams:
    mu: float
    dt: float
    horizon: float
    n_paths: int
    alpha: float = 0.05
    # random | plus | minus
    epsilon: str = "random"
    csv_paths: int = DEFAULT_CSV_PATHS


@dataclass
class ConcatParams:
    mu: float
    delta: float
    dt: float
    horizon: float
    n_paths: int
    alpha: float = 0.05
    csv_paths: int = DEFAULT_CSV_PATHS
    # 0 skips the renewal check
    renewal_segments: int = 0
    renewal_alpha: float = 0.01
    run_battery: bool = True


@dataclass
class DiscreteParams:
    law: BiasedBitLaw
    window: int
    bits_per_set: int
    depth: int = 4
    diffuse_horizon: int = 100
    tail_threshold: float = 1e-3
    # explicit I_n; None builds the greedy family
    family: Optional[IndexFamily] = None
    family_window: Optional[int] = None
    samples: int = 0


@dataclass
class CalibrateParams:
    dt: float
    horizon: float
    n_paths: int
    n_runs: int
    alpha: float = 0.05


Params = Union[HiddenParams, ConcatParams, DiscreteParams, CalibrateParams]


@dataclass
class ExperimentConfig:
    command: str
    seed: int
    params: Params
    out: str
    jobs: int = 1
    name: str = ""
    source_path: Optional[str] = None
    raw: Dict[str, Any] = field(default_factory=dict)

    def echo(self) -> Dict[str, Any]:
        """The configuration as written to manifests, after overrides."""
        data = dict(self.raw)
        data.update({"command": self.command, "seed": self.seed, "jobs": self.jobs, "name": self.name})
        data["params"] = params_echo(self.params)
        return data


def _load_file(path: str) -> Dict:
    # JSON is a subset of YAML, one loader serves both
    with open(path, "r", encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise ValueError(f"Config {path} must contain a mapping at the top level")
    return data


def _find_config(base: str) -> Optional[str]:
    for name in CONFIG_FILES:
        p = os.path.join(base, name)
        if os.path.exists(p):
            return p
    return None


def _number(block: Dict, key: str, default=None) -> float:
    value = block.get(key, default)
    if value is None:
        raise ValueError(f"Config '{key}' must be set")
    if isinstance(value, bool):
        raise ValueError(f"Config '{key}' must be a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError) as exc:
        raise ValueError(f"Config '{key}' must be a number, got {value!r}") from exc


def _positive(block: Dict, key: str, default=None) -> float:
    value = _number(block, key, default)
    if not value > 0:
        raise ValueError(f"Config '{key}' must be positive, got {value}")
    return value


def _integer(block: Dict, key: str, default=None, minimum: int = 1) -> int:
    value = _number(block, key, default)
    if value != int(value) or value < minimum:
        raise ValueError(f"Config '{key}' must be an integer >= {minimum}, got {value}")
    return int(value)


def _alpha(block: Dict, key: str = "alpha", default: float = 0.05) -> float:
    value = _number(block, key, default)
    if not 0 < value < 1:
        raise ValueError(f"Config '{key}' must lie in (0, 1), got {value}")
    return value


def _csv_paths(block: Dict) -> int:
    value = block.get("csv_paths", DEFAULT_CSV_PATHS)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        logger.warning(f"Invalid csv_paths '{value}', using {DEFAULT_CSV_PATHS}")
        return DEFAULT_CSV_PATHS
    return value


def _grid_block(block: Dict) -> Dict[str, float]:
    dt = _positive(block, "dt")
    horizon = _positive(block, "horizon", block.get("T"))
    if dt > horizon:
        raise ValueError(f"Config 'dt' ({dt}) must not exceed 'horizon' ({horizon})")
    return {"dt": dt, "horizon": horizon}


def _hidden_params(block: Dict) -> HiddenParams:
    epsilon = str(block.get("epsilon", "random")).strip().lower()
    if epsilon not in EPSILON_MODES:
        raise ValueError(f"Config 'epsilon' must be one of: {', '.join(EPSILON_MODES)}")
    return HiddenParams(
        mu=_positive(block, "mu"),
        n_paths=_integer(block, "n_paths", minimum=100),
        alpha=_alpha(block),
        epsilon=epsilon,
        csv_paths=_csv_paths(block),
        **_grid_block(block),
    )


def _concat_params(block: Dict) -> ConcatParams:
    run_battery = bool(block.get("run_battery", True))
    n_paths = _integer(block, "n_paths", minimum=1)
    if run_battery and n_paths < 100:
        raise ValueError(f"Config 'n_paths' must be at least 100 when the battery runs, got {n_paths}")
    return ConcatParams(
        mu=_positive(block, "mu"),
        delta=_positive(block, "delta"),
        n_paths=n_paths,
        alpha=_alpha(block),
        csv_paths=_csv_paths(block),
        renewal_segments=_integer(block, "renewal_segments", 0, minimum=0),
        renewal_alpha=_alpha(block, "renewal_alpha", 0.01),
        run_battery=run_battery,
        **_grid_block(block),
    )


def _family(raw) -> Optional[IndexFamily]:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        raise ValueError("Config 'family' must map indices to lists of indices")
    return IndexFamily.from_assignment({int(k): list(v) for k, v in raw.items()})


def _discrete_params(block: Dict) -> DiscreteParams:
    law_block = block.get("law")
    if not isinstance(law_block, dict):
        raise ValueError("Config 'law' must be a mapping with a 'kind'")
    try:
        law = BiasedBitLaw.from_config(law_block)
    except KeyError as exc:
        raise ValueError(f"Config 'law' misses {exc}") from exc
    family_window = block.get("family_window")
    return DiscreteParams(
        law=law,
        window=_integer(block, "window"),
        bits_per_set=_integer(block, "bits_per_set"),
        depth=_integer(block, "depth", 4, minimum=0),
        diffuse_horizon=_integer(block, "diffuse_horizon", 100),
        tail_threshold=_positive(block, "tail_threshold", 1e-3),
        family=_family(block.get("family")),
        family_window=None if family_window is None else _integer(block, "family_window"),
        samples=_integer(block, "samples", 0, minimum=0),
    )


def _calibrate_params(block: Dict) -> CalibrateParams:
    return CalibrateParams(
        n_paths=_integer(block, "n_paths", minimum=100),
        n_runs=_integer(block, "n_runs"),
        alpha=_alpha(block),
        **_grid_block(block),
    )


PARSERS = {
    "hidden": _hidden_params,
    "concat": _concat_params,
    "discrete": _discrete_params,
    "calibrate": _calibrate_params,
}


def parse_config(data: Dict, base_dir: Optional[str] = None, source_path: Optional[str] = None) -> ExperimentConfig:
    command = str(data.get("command", "")).strip().lower()
    if command not in COMMANDS:
        raise ValueError(f"Config 'command' must be one of: {', '.join(COMMANDS)}")

    seed = data.get("seed")
    if seed is None or isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ValueError("Config 'seed' must be set to a non-negative integer")

    block = data.get("params", {})
    if not isinstance(block, dict):
        raise ValueError("Config 'params' must be a mapping")
    params = PARSERS[command](block)

    jobs = _integer(data, "jobs", 1)
    out = data.get("out") or os.path.join("drift-camouflage-out", command)
    out = str(out)
    # Resolve relative output directories against the directory containing the config file
    if not os.path.isabs(out):
        out = os.path.normpath(os.path.join(base_dir or os.getcwd(), out))

    return ExperimentConfig(
        command=command,
        seed=seed,
        params=params,
        out=out,
        jobs=jobs,
        name=str(data.get("name") or command),
        source_path=source_path,
        raw=data,
    )


def load_config(path_or_dir: Optional[str] = None) -> ExperimentConfig:
    """Load an experiment configuration from YAML or JSON.

    If path_or_dir is a file, load that file. If it's a directory (or None),
    search for a known config name in that directory.
    """
    logger.info(f"Loading config from {path_or_dir}")
    base = os.path.abspath(path_or_dir) if path_or_dir else os.getcwd()
    if os.path.isdir(base):
        config_file_path = _find_config(base)
        if config_file_path is None:
            raise FileNotFoundError(f"No config found in directory {base}. Create one of: {', '.join(CONFIG_FILES)}")
    elif os.path.exists(base):
        config_file_path = base
    else:
        raise FileNotFoundError(f"Config file {base} does not exist")

    data = _load_file(config_file_path)
    return parse_config(data, os.path.dirname(config_file_path), config_file_path)


def apply_overrides(cfg: ExperimentConfig, seed: Optional[int] = None, jobs: Optional[int] = None, out: Optional[str] = None) -> ExperimentConfig:
    """Command-line values win over the file."""
    changes: Dict[str, Any] = {}
    if seed is not None:
        if seed < 0:
            raise ValueError(f"Seed must be non-negative, got {seed}")
        changes["seed"] = seed
    if jobs is not None:
        if jobs < 1:
            raise ValueError(f"Jobs must be at least 1, got {jobs}")
        changes["jobs"] = jobs
    if out is not None:
        changes["out"] = os.path.abspath(out)
    return replace(cfg, **changes) if changes else cfg


def params_echo(params: Params) -> Dict[str, Any]:
    if isinstance(params, DiscreteParams):
        data = {k: v for k, v in asdict(params).items() if k not in ("law", "family")}
        data["law"] = params.law.to_dict()
        data["family"] = None if params.family is None else {str(n): list(m) for n, m in params.family.assignment.items()}
        return data
    return asdict(params)
