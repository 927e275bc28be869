"""Run configuration: strict JSON schema shared by every CLI command.

Unknown keys anywhere in the document are hard errors so that typos never
silently fall back to defaults. The single ``sampling.seed`` drives every
random stream in a run through fixed derivation labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .game import ProblemSpec
from .gp import KERNEL_KINDS, RATIONAL_QUADRATIC, FitOptions, HyperBounds
from .grid import Grid, build_grid
from .hybrid import SwitchConfig
from .solver import SolverConfig

__all__ = [
    "ConfigError",
    "SamplingConfig",
    "GpConfig",
    "SweepSpec",
    "RunConfig",
    "parse_config",
    "load_config",
    "default_config_dict",
    "derive_seed",
    "STREAM_TRAIN",
    "STREAM_VALID",
    "STREAM_FIT",
    "STREAM_CV",
    "STREAM_SWEEP",
]

# fixed labels for per-purpose seed streams derived from sampling.seed
STREAM_TRAIN = 1
STREAM_VALID = 2
STREAM_FIT = 3
STREAM_CV = 4
STREAM_SWEEP = 5


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def derive_seed(seed: int, *key: int) -> int:
    """Deterministic child seed for a labelled stream."""
    return int(np.random.SeedSequence(entropy=seed, spawn_key=key).generate_state(1)[0])


@dataclass(frozen=True)
class SamplingConfig:
    n_train: int = 1000
    n_valid: int = 1000
    seed: int = 7
    time_range: tuple[float, float] = (-1.0, 0.0)

    def __post_init__(self) -> None:
        if self.n_train < 1 or self.n_valid < 1:
            raise ConfigError(
                f"sample counts must be positive, got n_train={self.n_train}, n_valid={self.n_valid}"
            )
        if not self.time_range[0] <= self.time_range[1] <= 0.0:
            raise ConfigError(f"time_range must be ordered and end at or before 0, got {self.time_range}")


@dataclass(frozen=True)
class GpConfig:
    kernels: tuple[str, ...] = KERNEL_KINDS
    restarts: int = 8
    cv_folds: int = 5
    bounds: HyperBounds = HyperBounds()

    def __post_init__(self) -> None:
        if not self.kernels:
            raise ConfigError("gp.kernels must list at least one kernel")
        for k in self.kernels:
            if k not in KERNEL_KINDS:
                raise ConfigError(f"unknown kernel {k!r}, expected one of {KERNEL_KINDS}")
        if self.restarts < 1 or self.cv_folds < 2:
            raise ConfigError(
                f"need restarts >= 1 and cv_folds >= 2, got {self.restarts}, {self.cv_folds}"
            )

    def fit_options(self, seed: int) -> FitOptions:
        return FitOptions(restarts=self.restarts, seed=seed, bounds=self.bounds)

    def report_kernel(self) -> str:
        """Kernel used by the validate/correct stages."""
        return RATIONAL_QUADRATIC if RATIONAL_QUADRATIC in self.kernels else self.kernels[0]


_SWEEP_DEFAULT = (0.5, 0.625, 0.75, 0.875, 1.0, 1.25, 1.5)


@dataclass(frozen=True)
class SweepSpec:
    v_e_values: tuple[float, ...] = _SWEEP_DEFAULT
    v_p_values: tuple[float, ...] = _SWEEP_DEFAULT
    retrain: bool = True

    def __post_init__(self) -> None:
        if not self.v_e_values or not self.v_p_values:
            raise ConfigError("sweep value lists must be non-empty")
        if any(v <= 0 for v in self.v_e_values + self.v_p_values):
            raise ConfigError("sweep speeds must be positive")


@dataclass
class RunConfig:
    problem: ProblemSpec
    grid: Grid
    sampling: SamplingConfig
    solver: SolverConfig = SolverConfig()
    gp: GpConfig = GpConfig()
    hybrid: SwitchConfig = SwitchConfig(delta=0.05, sigma0=0.02)
    sweep: SweepSpec = SweepSpec()
    output_dir: Path = Path("out")
    rollout_dt: float = 0.01
    raw: dict = field(default_factory=dict)


def _take(block: dict, name: str, allowed: set[str]) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r} block: {sorted(unknown)}")


def parse_config(doc: dict) -> RunConfig:
    """Build a validated RunConfig from a JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be an object")
    _take(doc, "root", {"problem", "grid", "solver", "sampling", "gp", "hybrid", "sweep", "output_dir", "rollout_dt"})
    for required in ("problem", "grid", "sampling"):
        if required not in doc:
            raise ConfigError(f"missing required config block {required!r}")

    try:
        pb = dict(doc["problem"])
        _take(pb, "problem", {"v_e", "v_p", "u_max", "d_max", "r1", "r2", "horizon"})
        problem = ProblemSpec(**pb)

        gb = dict(doc["grid"])
        _take(gb, "grid", {"lower", "upper", "counts", "periodic"})
        grid = build_grid(**gb)

        sb = dict(doc["sampling"])
        _take(sb, "sampling", {"n_train", "n_valid", "seed", "time_range"})
        if "seed" not in sb:
            raise ConfigError("sampling.seed is required; runs never seed from the clock")
        if "time_range" in sb:
            sb["time_range"] = tuple(float(v) for v in sb["time_range"])
        sampling = SamplingConfig(**sb)

        vb = dict(doc.get("solver", {}))
        _take(vb, "solver", {"cfl", "eno_order", "monotone_tube", "store_every"})
        solver = SolverConfig(**vb)

        kb = dict(doc.get("gp", {}))
        _take(kb, "gp", {"kernels", "restarts", "cv_folds", "bounds"})
        if "kernels" in kb:
            kb["kernels"] = tuple(kb["kernels"])
        if "bounds" in kb:
            bounds = dict(kb["bounds"])
            _take(bounds, "gp.bounds", {"length_scale", "signal_std", "noise_std", "alpha"})
            kb["bounds"] = HyperBounds(**{k: tuple(v) for k, v in bounds.items()})
        gp_cfg = GpConfig(**kb)

        hb = dict(doc.get("hybrid", {"delta": 0.05, "sigma0": 0.02}))
        _take(hb, "hybrid", {"delta", "sigma0", "law", "std_comparison"})
        hb.setdefault("delta", 0.05)
        hb.setdefault("sigma0", 0.02)
        hybrid = SwitchConfig(**hb)

        wb = dict(doc.get("sweep", {}))
        _take(wb, "sweep", {"v_e_values", "v_p_values", "retrain"})
        for key in ("v_e_values", "v_p_values"):
            if key in wb:
                wb[key] = tuple(float(v) for v in wb[key])
        sweep = SweepSpec(**wb)

        rollout_dt = float(doc.get("rollout_dt", 0.01))
        if rollout_dt <= 0:
            raise ConfigError(f"rollout_dt must be positive, got {rollout_dt}")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc

    return RunConfig(
        problem=problem,
        grid=grid,
        sampling=sampling,
        solver=solver,
        gp=gp_cfg,
        hybrid=hybrid,
        sweep=sweep,
        output_dir=Path(doc.get("output_dir", "out")),
        rollout_dt=rollout_dt,
        raw=doc,
    )


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_config(doc)


def default_config_dict() -> dict:
    """The reference configuration: nominal game, 21-node grid, seed 7."""
    return {
        "problem": {
            "v_e": 0.75, "v_p": 0.75, "u_max": 3.0, "d_max": 3.0,
            "r1": 0.25, "r2": 1.0, "horizon": 1.0,
        },
        "grid": {
            "lower": [-1.0, -1.0, 0.0],
            "upper": [1.0, 1.0, 1.0],
            "counts": [21, 21, 21],
            "periodic": [False, False, True],
        },
        "solver": {"cfl": 0.5, "eno_order": 3, "monotone_tube": True, "store_every": 1},
        "sampling": {"n_train": 1000, "n_valid": 1000, "seed": 7, "time_range": [-1.0, 0.0]},
        "gp": {"kernels": list(KERNEL_KINDS), "restarts": 8, "cv_folds": 5},
        "hybrid": {"delta": 0.05, "sigma0": 0.02, "law": "value_and_std", "std_comparison": "greater"},
        "sweep": {
            "v_e_values": list(_SWEEP_DEFAULT),
            "v_p_values": list(_SWEEP_DEFAULT),
            "retrain": True,
        },
        "output_dir": "out",
        "rollout_dt": 0.01,
    }
