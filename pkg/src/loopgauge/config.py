"""Run configuration for the experiment CLI."""

import json
from dataclasses import asdict, dataclass, fields, replace

from .constants import CONSTANTS

EXPERIMENTS = ("algebra-check", "exp-bench", "coulomb-solve", "g2-solve")
INSTANCES = ("octonion", "quaternion")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    experiment: str = "coulomb-solve"
    instance: str = "octonion"
    grid: tuple = (64, 64)
    eps: float = 0.05
    nmodes: int = 3
    kmax: int = 1
    seed: int = 0
    tol_outer: float = CONSTANTS.tol_outer
    max_steps: int = CONSTANTS.newton_max_steps
    cg_max_iter: int = CONSTANTS.cg_max_iter
    residual: str = "map"
    k: int = 2
    r: float = 2.0
    samples: int = 10_000
    bracket_samples: int = 50
    exp_draws: int = 3
    out: str = "runs/default"
    # negative-control hook: perturb one structure constant of the loop product
    corrupt_structure: bool = False

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.instance not in INSTANCES:
            raise ConfigError(f"unknown loop instance {self.instance!r}")
        if not 1 <= len(self.grid) <= 7 or any(int(n) < 4 for n in self.grid):
            raise ConfigError(f"grid must have 1..7 axes of size >= 4, got {self.grid}")
        if self.experiment == "g2-solve" and (len(self.grid) != 7 or self.instance != "octonion"):
            raise ConfigError("g2-solve needs a 7-dimensional grid and the octonion instance")
        if self.eps < 0 or self.tol_outer <= 0 or self.max_steps < 1:
            raise ConfigError("eps must be >= 0, tol_outer > 0 and max_steps >= 1")
        if self.residual not in ("map", "direct"):
            raise ConfigError(f"unknown residual {self.residual!r}")
        if min(self.samples, self.bracket_samples, self.exp_draws) < 1:
            raise ConfigError("sample counts must be positive")
        return self

    def to_dict(self):
        d = asdict(self)
        d["grid"] = list(self.grid)
        return d


_DEFAULTS = {
    "g2-solve": {"grid": (4,) * 7, "eps": 0.02, "residual": "direct"},
}


def parse_grid(text):
    try:
        sizes = tuple(int(v) for v in text.replace("x", ",").split(",") if v.strip())
    except ValueError as exc:
        raise ConfigError(f"bad grid description {text!r}") from exc
    if not sizes:
        raise ConfigError(f"bad grid description {text!r}")
    return sizes


def load(experiment, path=None, overrides=None):
    """Defaults for the experiment, then the JSON file, then explicit overrides."""
    values = dict(_DEFAULTS.get(experiment, {}))
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(data)
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values["experiment"] = experiment
    known = {f.name for f in fields(RunConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if "grid" in values:
        g = values["grid"]
        values["grid"] = parse_grid(g) if isinstance(g, str) else tuple(int(v) for v in g)
    try:
        cfg = replace(RunConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg.validate()
