"""Exact Gaussian-process regression on solver-error samples.

Inputs are 4-d points (x1, x2, x3, t); the prior mean is a constant basis
whose coefficient is re-estimated by generalised least squares inside every
marginal-likelihood evaluation, so hyperparameter gradients stay exact by
the envelope argument. Four isotropic kernels are supported. Fitting
maximises the log marginal likelihood with analytic gradients in
log-hyperparameter space from several seeded random restarts, and an
ordinary-least-squares baseline shares the same cross-validation harness.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import minimize

__all__ = [
    "KERNEL_KINDS",
    "KernelSpec",
    "HyperBounds",
    "FitOptions",
    "GpModel",
    "Prediction",
    "GpFitError",
    "kernel_eval",
    "gram",
    "log_marginal_likelihood",
    "build_model",
    "fit",
    "predict",
    "predict_batch",
    "predict_mean",
    "cross_validate",
    "CvResult",
    "linear_baseline",
    "LinearModel",
    "fold_assignments",
    "save_model",
    "load_model",
    "model_id",
]

SQUARED_EXPONENTIAL = "squared_exponential"
MATERN52 = "matern52"
EXPONENTIAL = "exponential"
RATIONAL_QUADRATIC = "rational_quadratic"
KERNEL_KINDS = (SQUARED_EXPONENTIAL, MATERN52, EXPONENTIAL, RATIONAL_QUADRATIC)

_JITTER_START = 1e-10
_JITTER_MAX = 1e-6

_FAIL_OBJECTIVE = 1e25

_CHUNK = 2048


class GpFitError(RuntimeError):
    """Every restart of a hyperparameter search failed."""


@dataclass(frozen=True)
class KernelSpec:
    """Stationary isotropic kernel: kind, length scale, signal variance.

    ``alpha`` is the tail-weight exponent of the rational-quadratic kernel
    and must be None for the other kinds.
    """

    kind: str
    length_scale: float
    signal_variance: float
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}, expected one of {KERNEL_KINDS}")
        if self.length_scale <= 0 or self.signal_variance <= 0:
            raise ValueError(
                f"length_scale and signal_variance must be positive, got "
                f"{self.length_scale}, {self.signal_variance}"
            )
        if self.kind == RATIONAL_QUADRATIC:
            if self.alpha is None or self.alpha <= 0:
                raise ValueError(f"rational_quadratic needs alpha > 0, got {self.alpha}")
        elif self.alpha is not None:
            raise ValueError(f"alpha is only meaningful for rational_quadratic, got {self.alpha}")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "length_scale": self.length_scale,
            "signal_variance": self.signal_variance,
            "alpha": self.alpha,
        }


@dataclass(frozen=True)
class HyperBounds:
    """Box bounds for the hyperparameter search (std scale, not variance)."""

    length_scale: tuple[float, float] = (1e-2, 10.0)
    signal_std: tuple[float, float] = (1e-4, 10.0)
    noise_std: tuple[float, float] = (1e-8, 1.0)
    alpha: tuple[float, float] = (0.1, 1e3)


@dataclass(frozen=True)
class FitOptions:
    restarts: int = 8
    seed: int = 0
    bounds: HyperBounds = HyperBounds()
    max_iter: int = 100

    def __post_init__(self) -> None:
        if self.restarts < 1:
            raise ValueError(f"need at least one restart, got {self.restarts}")


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise squared distances, elementwise (shape- and chunk-stable)."""
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _kernel_from_r2(kind: str, r2: np.ndarray, l: float, sf2: float, alpha: float | None):
    if kind == SQUARED_EXPONENTIAL:
        return sf2 * np.exp(-r2 / (2.0 * l * l))
    if kind == MATERN52:
        s = np.sqrt(5.0 * r2) / l
        return sf2 * (1.0 + s + s * s / 3.0) * np.exp(-s)
    if kind == EXPONENTIAL:
        return sf2 * np.exp(-np.sqrt(r2) / l)
    z = r2 / (2.0 * alpha * l * l)
    return sf2 * np.exp(-alpha * np.log1p(z))


def kernel_eval(spec: KernelSpec, r):
    """Kernel value as a function of distance ``r >= 0`` (scalar or array)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("distances must be non-negative")
    out = _kernel_from_r2(spec.kind, r * r, spec.length_scale, spec.signal_variance, spec.alpha)
    return float(out) if out.ndim == 0 else out


def _kernel_grad_log_l(kind, K, r2, l, sf2, alpha):
    if kind == SQUARED_EXPONENTIAL:
        return K * (r2 / (l * l))
    if kind == MATERN52:
        s = np.sqrt(5.0 * r2) / l
        return sf2 * np.exp(-s) * (s * s / 3.0) * (1.0 + s)
    if kind == EXPONENTIAL:
        return K * (np.sqrt(r2) / l)
    z = r2 / (2.0 * alpha * l * l)
    return K * (2.0 * alpha * z / (1.0 + z))


def _kernel_grad_log_alpha(K, r2, l, alpha):
    z = r2 / (2.0 * alpha * l * l)
    return K * alpha * (z / (1.0 + z) - np.log1p(z))


@dataclass(frozen=True)
class CholFactor:
    """Lower Cholesky factor of K + (noise + jitter) I."""

    L: np.ndarray
    jitter: float


def _chol_with_jitter(a: np.ndarray) -> CholFactor:
    jitter = 0.0
    while True:
        try:
            m = a if jitter == 0.0 else a + jitter * np.eye(a.shape[0])
            return CholFactor(sla.cholesky(m, lower=True), jitter)
        except sla.LinAlgError:
            if jitter >= _JITTER_MAX:
                raise
            jitter = _JITTER_START if jitter == 0.0 else jitter * 10.0


def gram(inputs: np.ndarray, kernel: KernelSpec, noise_variance: float) -> CholFactor:
    """Factorise K + sigma_n^2 I, escalating diagonal jitter if needed."""
    x = np.asarray(inputs, dtype=float)
    if x.ndim != 2:
        raise ValueError(f"inputs must be 2-d, got shape {x.shape}")
    if noise_variance < 0:
        raise ValueError(f"noise variance must be non-negative, got {noise_variance}")
    r2 = _sq_dists(x, x)
    K = _kernel_from_r2(kernel.kind, r2, kernel.length_scale, kernel.signal_variance, kernel.alpha)
    return _chol_with_jitter(K + noise_variance * np.eye(x.shape[0]))


_LOG2PI = math.log(2.0 * math.pi)


def _lml_core(r2, y, kind, l, sf2, sn2, alpha):
    """LML with GLS constant mean, gradient in log-std hyperparameters.

    Returns (lml, grads dict, aux dict). The gradient of the profiled
    likelihood equals the partial gradient at the optimal mean coefficient.
    """
    n = y.size
    K = _kernel_from_r2(kind, r2, l, sf2, alpha)
    factor = _chol_with_jitter(K + sn2 * np.eye(n))
    L = factor.L
    ones = np.ones(n)
    s1 = sla.cho_solve((L, True), ones)
    sy = sla.cho_solve((L, True), y)
    beta = float(ones @ sy) / float(ones @ s1)
    yc = y - beta
    w = sla.cho_solve((L, True), yc)
    lml = -0.5 * float(yc @ w) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * _LOG2PI

    a_inv = sla.cho_solve((L, True), np.eye(n))
    Q = np.outer(w, w) - a_inv  # d lml / dA = Q/2
    grads = {
        "log_length_scale": 0.5 * float(np.sum(Q * _kernel_grad_log_l(kind, K, r2, l, sf2, alpha))),
        "log_signal_variance": 0.5 * float(np.sum(Q * (2.0 * K))),
        "log_noise_variance": 0.5 * float(np.trace(Q)) * 2.0 * sn2,
    }
    if kind == RATIONAL_QUADRATIC:
        grads["log_alpha"] = 0.5 * float(np.sum(Q * _kernel_grad_log_alpha(K, r2, l, alpha)))
    aux = {"L": L, "jitter": factor.jitter, "beta": beta, "weights": w, "lml": lml}
    return lml, grads, aux


def log_marginal_likelihood(
    inputs: np.ndarray, targets: np.ndarray, kernel: KernelSpec, noise_variance: float
) -> tuple[float, dict[str, float]]:
    """Profiled log marginal likelihood and its log-hyperparameter gradient."""
    x = np.asarray(inputs, dtype=float)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if x.shape[0] != y.size:
        raise ValueError(f"{x.shape[0]} inputs vs {y.size} targets")
    lml, grads, _ = _lml_core(
        _sq_dists(x, x), y, kernel.kind, kernel.length_scale,
        kernel.signal_variance, noise_variance, kernel.alpha,
    )
    return lml, grads


@dataclass(eq=False)
class GpModel:
    """Exact-inference posterior: training data, factor, and hyperparameters."""

    kernel: KernelSpec
    noise_variance: float
    beta: float
    train_inputs: np.ndarray
    train_targets: np.ndarray
    weights: np.ndarray
    L: np.ndarray
    jitter: float
    seed: int | None = None
    lml: float = math.nan
    provenance: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return int(self.train_targets.size)


@dataclass(frozen=True)
class Prediction:
    mean: float
    std: float


def build_model(
    inputs: np.ndarray,
    targets: np.ndarray,
    kernel: KernelSpec,
    noise_variance: float,
    seed: int | None = None,
    provenance: dict | None = None,
) -> GpModel:
    """Exact inference at fixed hyperparameters."""
    x = np.ascontiguousarray(inputs, dtype=float)
    y = np.ascontiguousarray(targets, dtype=float).reshape(-1)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError(f"inputs {x.shape} incompatible with {y.size} targets")
    if x.shape[0] < 1:
        raise ValueError("need at least one training point")
    lml, _, aux = _lml_core(
        _sq_dists(x, x), y, kernel.kind, kernel.length_scale,
        kernel.signal_variance, noise_variance, kernel.alpha,
    )
    return GpModel(
        kernel=kernel,
        noise_variance=noise_variance,
        beta=aux["beta"],
        train_inputs=x,
        train_targets=y,
        weights=aux["weights"],
        L=aux["L"],
        jitter=aux["jitter"],
        seed=seed,
        lml=lml,
        provenance=provenance or {},
    )


def _as_xy(samples) -> tuple[np.ndarray, np.ndarray]:
    """Accept a SampleSet, a sequence of ErrorSample, or an (X, y) pair."""
    if hasattr(samples, "inputs") and hasattr(samples, "targets"):
        return samples.inputs(), samples.targets()
    if isinstance(samples, tuple) and len(samples) == 2:
        return np.asarray(samples[0], dtype=float), np.asarray(samples[1], dtype=float)
    rows = list(samples)
    x = np.array([s.input_row for s in rows])
    y = np.array([s.eps_tilde for s in rows])
    return x, y


def _theta_bounds(kind: str, b: HyperBounds) -> list[tuple[float, float]]:
    out = [
        (math.log(b.length_scale[0]), math.log(b.length_scale[1])),
        (math.log(b.signal_std[0]), math.log(b.signal_std[1])),
        (math.log(b.noise_std[0]), math.log(b.noise_std[1])),
    ]
    if kind == RATIONAL_QUADRATIC:
        out.append((math.log(b.alpha[0]), math.log(b.alpha[1])))
    return out


def _unpack(kind: str, theta: np.ndarray) -> tuple[KernelSpec, float]:
    l = math.exp(theta[0])
    sf2 = math.exp(2.0 * theta[1])
    sn2 = math.exp(2.0 * theta[2])
    alpha = math.exp(theta[3]) if kind == RATIONAL_QUADRATIC else None
    return KernelSpec(kind, l, sf2, alpha), sn2


def fit(samples, kind: str, options: FitOptions | None = None) -> GpModel:
    """Maximise the marginal likelihood from seeded log-uniform restarts.

    The best restart (by final likelihood; earliest wins ties) defines the
    returned model. Restarts whose factorisation fails even at maximum
    jitter are recorded and skipped; if all fail a :class:`GpFitError`
    carries the tally.
    """
    opts = options or FitOptions()
    x, y = _as_xy(samples)
    if x.shape[0] < 5:
        raise ValueError(f"need at least 5 samples to fit, got {x.shape[0]}")
    if kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    r2 = _sq_dists(x, x)
    bounds = _theta_bounds(kind, opts.bounds)
    grad_keys = ["log_length_scale", "log_signal_variance", "log_noise_variance"]
    if kind == RATIONAL_QUADRATIC:
        grad_keys.append("log_alpha")

    def objective(theta):
        spec, sn2 = _unpack(kind, theta)
        try:
            lml, grads, _ = _lml_core(
                r2, y, kind, spec.length_scale, spec.signal_variance, sn2, spec.alpha
            )
        except sla.LinAlgError:
            return _FAIL_OBJECTIVE, np.zeros(len(theta))
        return -lml, -np.array([grads[k] for k in grad_keys])

    rng = np.random.default_rng(opts.seed)
    best = None
    failures = 0
    for start in range(opts.restarts):
        theta0 = np.array([rng.uniform(lo, hi) for lo, hi in bounds])
        res = minimize(
            objective, theta0, jac=True, method="L-BFGS-B",
            bounds=bounds, options={"maxiter": opts.max_iter},
        )
        if res.fun >= _FAIL_OBJECTIVE:
            failures += 1
            continue
        if best is None or res.fun < best.fun:
            best = res
    if best is None:
        raise GpFitError(f"all {opts.restarts} restarts failed to factorise")
    spec, sn2 = _unpack(kind, best.x)
    model = build_model(x, y, spec, sn2, seed=opts.seed)
    model.provenance.update({"restarts": opts.restarts, "failed_restarts": failures})
    return model


def predict_mean(model: GpModel, points: np.ndarray) -> np.ndarray:
    """Posterior mean at many 4-d points (row-wise deterministic)."""
    z = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(z.shape[0])
    for start in range(0, z.shape[0], _CHUNK):
        block = z[start : start + _CHUNK]
        r2 = _sq_dists(block, model.train_inputs)
        ks = _kernel_from_r2(
            model.kernel.kind, r2, model.kernel.length_scale,
            model.kernel.signal_variance, model.kernel.alpha,
        )
        out[start : start + _CHUNK] = model.beta + np.sum(ks * model.weights, axis=1)
    return out


def predict_batch(model: GpModel, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation at many 4-d points."""
    z = np.atleast_2d(np.asarray(points, dtype=float))
    means = predict_mean(model, z)
    stds = np.empty(z.shape[0])
    k0 = model.kernel.signal_variance
    for i in range(z.shape[0]):
        r2 = _sq_dists(z[i : i + 1], model.train_inputs)[0]
        ks = _kernel_from_r2(
            model.kernel.kind, r2, model.kernel.length_scale,
            model.kernel.signal_variance, model.kernel.alpha,
        )
        v = sla.solve_triangular(model.L, ks, lower=True)
        var = k0 - float(v @ v)
        stds[i] = math.sqrt(var) if var > 0.0 else 0.0
    return means, stds


def predict(model: GpModel, state: Sequence[float], t: float | None = None) -> Prediction:
    """Posterior at one point; ``state`` is (x1, x2, x3) with ``t`` separate,
    or a full 4-d point when ``t`` is omitted."""
    point = list(state) + ([] if t is None else [t])
    if len(point) != model.train_inputs.shape[1]:
        raise ValueError(
            f"query has {len(point)} coordinates, model expects {model.train_inputs.shape[1]}"
        )
    means, stds = predict_batch(model, np.array([point]))
    return Prediction(float(means[0]), float(stds[0]))


def fold_assignments(n: int, folds: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle split into near-equal folds, shared across model kinds."""
    if folds < 2:
        raise ValueError(f"need at least 2 folds, got {folds}")
    if n < folds:
        raise ValueError(f"cannot split {n} samples into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(chunk) for chunk in np.array_split(perm, folds)]


@dataclass
class CvResult:
    kind: str
    fold_rmse: list[float]
    rmse: float
    seed: int


def _derived_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=key).generate_state(1)[0])


def cross_validate(
    samples, folds: int, kind: str, seed: int, options: FitOptions | None = None
) -> CvResult:
    """K-fold CV RMSE of a refitted GP; folds come from the shared splitter."""
    x, y = _as_xy(samples)
    assign = fold_assignments(x.shape[0], folds, seed)
    base = options or FitOptions()
    sq_sum = 0.0
    fold_rmse = []
    for i, held in enumerate(assign):
        mask = np.ones(x.shape[0], dtype=bool)
        mask[held] = False
        model = fit((x[mask], y[mask]), kind, replace(base, seed=_derived_seed(seed, i)))
        resid = predict_mean(model, x[held]) - y[held]
        fold_rmse.append(float(np.sqrt(np.mean(resid * resid))))
        sq_sum += float(resid @ resid)
    return CvResult(kind, fold_rmse, math.sqrt(sq_sum / x.shape[0]), seed)


@dataclass
class LinearModel:
    """Ordinary least squares on (1, x1, x2, x3, t)."""

    coef: np.ndarray
    fold_rmse: list[float]
    cv_rmse: float
    rank_deficient: bool

    def predict(self, points: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(np.asarray(points, dtype=float))
        design = np.hstack([np.ones((z.shape[0], 1)), z])
        return np.sum(design * self.coef, axis=1)


def linear_baseline(samples, folds: int = 5, seed: int = 0) -> LinearModel:
    """OLS baseline evaluated with the same fold layout as the GP models."""
    x, y = _as_xy(samples)
    design = np.hstack([np.ones((x.shape[0], 1)), x])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    assign = fold_assignments(x.shape[0], folds, seed)
    sq_sum = 0.0
    fold_rmse = []
    for held in assign:
        mask = np.ones(x.shape[0], dtype=bool)
        mask[held] = False
        c, _, _, _ = np.linalg.lstsq(design[mask], y[mask], rcond=None)
        resid = design[held] @ c - y[held]
        fold_rmse.append(float(np.sqrt(np.mean(resid * resid))))
        sq_sum += float(resid @ resid)
    return LinearModel(
        coef=coef,
        fold_rmse=fold_rmse,
        cv_rmse=math.sqrt(sq_sum / x.shape[0]),
        rank_deficient=bool(rank < design.shape[1]),
    )


# ---------------------------------------------------------------------------
# model archive


def _write_array(path: str, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(path: str, shape: tuple[int, ...]) -> np.ndarray:
    data = np.frombuffer(open(path, "rb").read(), dtype="<f8")
    expected = int(np.prod(shape))
    if data.size != expected:
        raise ValueError(f"{path}: expected {expected} float64 values, found {data.size}")
    return data.reshape(shape).copy()


def save_model(model: GpModel, path) -> None:
    """Write manifest + binary arrays; round-trips bit-exactly via load_model."""
    os.makedirs(path, exist_ok=True)
    manifest = {
        "format": "gp-model",
        "version": 1,
        "kernel": model.kernel.to_dict(),
        "noise_variance": model.noise_variance,
        "beta": model.beta,
        "jitter": model.jitter,
        "seed": model.seed,
        "lml": model.lml,
        "n": model.n,
        "input_dims": int(model.train_inputs.shape[1]),
        "provenance": model.provenance,
    }
    with open(os.path.join(path, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    _write_array(os.path.join(path, "train_inputs.bin"), model.train_inputs)
    _write_array(os.path.join(path, "train_targets.bin"), model.train_targets)
    _write_array(os.path.join(path, "weights.bin"), model.weights)


def load_model(path) -> GpModel:
    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    if manifest.get("format") != "gp-model":
        raise ValueError(f"{path} is not a model archive")
    kd = manifest["kernel"]
    kernel = KernelSpec(kd["kind"], kd["length_scale"], kd["signal_variance"], kd["alpha"])
    n = int(manifest["n"])
    dims = int(manifest["input_dims"])
    x = _read_array(os.path.join(path, "train_inputs.bin"), (n, dims))
    y = _read_array(os.path.join(path, "train_targets.bin"), (n,))
    w = _read_array(os.path.join(path, "weights.bin"), (n,))
    K = _kernel_from_r2(kernel.kind, _sq_dists(x, x), kernel.length_scale,
                        kernel.signal_variance, kernel.alpha)
    a = K + (manifest["noise_variance"] + manifest["jitter"]) * np.eye(n)
    L = sla.cholesky(a, lower=True)
    return GpModel(
        kernel=kernel,
        noise_variance=manifest["noise_variance"],
        beta=manifest["beta"],
        train_inputs=x,
        train_targets=y,
        weights=w,
        L=L,
        jitter=manifest["jitter"],
        seed=manifest["seed"],
        lml=manifest["lml"],
        provenance=manifest.get("provenance", {}),
    )


def model_id(model: GpModel) -> str:
    """Content hash identifying a fitted model."""
    import hashlib

    h = hashlib.sha256()
    manifest = {
        "kernel": model.kernel.to_dict(),
        "noise_variance": model.noise_variance,
        "beta": model.beta,
        "jitter": model.jitter,
        "n": model.n,
    }
    h.update(json.dumps(manifest, sort_keys=True).encode())
    h.update(np.ascontiguousarray(model.train_inputs, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(model.train_targets, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())
    return h.hexdigest()
