"""Robust fitting of the loss laws to observed training runs.

The objective is a Huber loss on log-space residuals, minimized by L-BFGS-B
from a grid of initializations (sampled when the full grid is too large).
Expert anchors are fitted through the smooth reparameterization
``e_start = 1 + exp(u)``, ``e_max = e_start + exp(v)`` so their ordering
constraints hold by construction. Gradients are analytic.

Runs are canonically sorted before anything touches them, which makes the
holdout split, the objective value, and the fitted parameters bitwise
invariant to the order rows arrive in (at a fixed ``rng_seed``).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares, minimize

from .errors import FitFailedError, IdentifiabilityWarning
from .laws import DenseLawParams, ScalingLawParams, predict_loss, predict_loss_dense

__all__ = [
    "TrainingRun",
    "FitConfig",
    "StartDiagnostic",
    "FitReport",
    "DenseFitReport",
    "huber",
    "objective",
    "rmsle",
    "rmsle_dense",
    "fit_moe",
    "fit_dense",
    "runs_from_csv",
    "runs_to_csv",
    "default_grid_spec",
]

RUNS_CSV_COLUMNS = ("n_dense", "d_tokens", "experts", "val_loss")

# Objective value signalling a nonpositive loss bracket; large enough to lose
# against any sane fit, finite so the line search can walk back out.
_PENALTY_BASE = 1.0e9
_BRACKET_FLOOR = 1.0e-12


@dataclass(frozen=True)
class TrainingRun:
    """One observed training run."""

    n_dense: float
    d_tokens: float
    experts: float
    val_loss: float

    def __post_init__(self):
        if not self.n_dense > 0:
            raise ValueError("n_dense must be positive")
        if not self.d_tokens > 0:
            raise ValueError("d_tokens must be positive")
        if not self.experts >= 1:
            raise ValueError("experts must be >= 1")
        if not self.val_loss > 0:
            raise ValueError("val_loss must be positive")


def default_grid_spec() -> dict[str, tuple[float, ...]]:
    """Initialization grid for the multi-start search.

    Exponents start on {0, .5, ..., 2}; coefficient axes are natural-log
    initializations (the coefficient starts at exp(value)); the interaction
    coefficient starts on the same coarse ladder as the log-coefficients and
    the irreducible term on {-1, ..., 1}.
    """
    exponents = (0.0, 0.5, 1.0, 1.5, 2.0)
    log_coefs = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0)
    return {
        "alpha": exponents,
        "beta": exponents,
        "gamma": exponents,
        "log_coef_n": log_coefs,
        "log_coef_e": log_coefs,
        "log_coef_d": log_coefs,
        "interaction": log_coefs,
        "irreducible": (-1.0, -0.5, 0.0, 0.5, 1.0),
    }


@dataclass(frozen=True)
class FitConfig:
    """Knobs for the fitting procedure.

    Attributes:
        huber_delta: residual scale where the loss switches from quadratic
            to linear.
        grid_spec: per-parameter initialization values (see
            :func:`default_grid_spec`).
        max_starts: number of grid points sampled (without replacement) when
            the full grid is larger; ``use_full_grid`` overrides.
        rng_seed: seed driving the holdout split and the start sample.
        convergence_tol: objective-change tolerance handed to the local
            minimizer.
        max_iterations: iteration cap per start.
        holdout_fraction: share of runs held out of the objective and scored
            separately; 0 disables the split.
        e_start_init: initial one-expert anchor, > 1 (shared by all starts).
        e_max_init: initial saturation anchor, > e_start_init.
        use_full_grid: run every grid point instead of sampling.
    """

    huber_delta: float = 1.0e-3
    grid_spec: dict[str, tuple[float, ...]] = field(default_factory=default_grid_spec)
    max_starts: int = 512
    rng_seed: int = 0
    convergence_tol: float = 1.0e-9
    max_iterations: int = 1000
    holdout_fraction: float = 0.2
    e_start_init: float = 1.5
    e_max_init: float = 64.0
    use_full_grid: bool = False

    def __post_init__(self):
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        if self.max_starts < 1:
            raise ValueError("max_starts must be >= 1")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in [0, 1)")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.e_start_init > 1.0:
            raise ValueError("e_start_init must exceed 1")
        if not self.e_max_init > self.e_start_init:
            raise ValueError("e_max_init must exceed e_start_init")
        missing = set(default_grid_spec()) - set(self.grid_spec)
        if missing:
            raise ValueError(f"grid_spec missing axes: {', '.join(sorted(missing))}")
        for name, values in self.grid_spec.items():
            if len(values) == 0:
                raise ValueError(f"grid_spec axis {name!r} is empty")


@dataclass(frozen=True)
class StartDiagnostic:
    """Per-start record: where the search began and where it ended."""

    index: int
    init: dict[str, float]
    initial_objective: float
    final_objective: float
    converged: bool

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "init": dict(self.init),
            "initial_objective": self.initial_objective,
            "final_objective": self.final_objective,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class FitReport:
    """Outcome of :func:`fit_moe`."""

    params: ScalingLawParams
    objective: float
    rmsle: float
    rmsle_holdout: float | None
    n_runs: int
    n_train: int
    n_holdout: int
    starts_run: int
    per_start: tuple[StartDiagnostic, ...]
    notes: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "objective": self.objective,
            "rmsle": self.rmsle,
            "rmsle_holdout": self.rmsle_holdout,
            "n_runs": self.n_runs,
            "n_train": self.n_train,
            "n_holdout": self.n_holdout,
            "starts_run": self.starts_run,
            "per_start": [s.to_dict() for s in self.per_start],
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class DenseFitReport:
    """Outcome of :func:`fit_dense`."""

    params: DenseLawParams
    objective: float
    rmsle: float
    rmsle_holdout: float | None
    n_runs: int
    n_train: int
    n_holdout: int
    starts_run: int
    per_start: tuple[StartDiagnostic, ...]
    notes: tuple[str, ...]

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "objective": self.objective,
            "rmsle": self.rmsle,
            "rmsle_holdout": self.rmsle_holdout,
            "n_runs": self.n_runs,
            "n_train": self.n_train,
            "n_holdout": self.n_holdout,
            "starts_run": self.starts_run,
            "per_start": [s.to_dict() for s in self.per_start],
            "notes": list(self.notes),
        }


def huber(residuals, delta: float):
    """Elementwise Huber loss: quadratic within ``delta``, linear outside.

    huber(r) = r^2/2 for |r| <= delta, and delta*(|r| - delta/2) beyond.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    r = np.asarray(residuals, dtype=float)
    a = np.abs(r)
    out = np.where(a <= delta, 0.5 * r * r, delta * (a - 0.5 * delta))
    if np.ndim(residuals) == 0:
        return float(out)
    return out


def _sorted_runs(runs: Sequence[TrainingRun]) -> list[TrainingRun]:
    return sorted(runs, key=lambda r: (r.n_dense, r.d_tokens, r.experts, r.val_loss))


def _run_arrays(runs: Sequence[TrainingRun]):
    n = np.array([r.n_dense for r in runs], dtype=float)
    d = np.array([r.d_tokens for r in runs], dtype=float)
    e = np.array([r.experts for r in runs], dtype=float)
    y = np.log(np.array([r.val_loss for r in runs], dtype=float))
    return np.log(n), np.log(d), e, y


def _log_effective_experts(e: np.ndarray, e_start: float, e_max: float, gap: float) -> np.ndarray:
    # spread = (1/e_start - 1/e_max)^-1 in a form immune to cancellation
    # when the anchors sit close together.
    spread = e_start * e_max / gap
    e_hat = 1.0 / (1.0 / (e - 1.0 + spread) + 1.0 / e_max)
    e_hat = np.where(e == 1.0, e_start, e_hat)
    return np.log(e_hat)


def _moe_residuals(theta, x, z, e, y):
    """Log-space residuals of the expert-aware law at a raw parameter vector.

    Returns (residuals, bracket, parts) where parts carries the per-term
    powers needed by the gradient.
    """
    alpha, beta, gamma, a_n, a_e, a_d, d_int, f, u, v = theta
    e_start = 1.0 + math.exp(u)
    gap = math.exp(v)
    e_max = e_start + gap
    w = _log_effective_experts(e, e_start, e_max, gap)
    t_n = np.exp(a_n - alpha * x)
    t_e = np.exp(a_e - beta * w)
    t_d = np.exp(a_d - gamma * z)
    bracket = t_n + t_e + t_d + f
    valid = bracket > _BRACKET_FLOOR
    resid = np.where(valid, np.log(np.where(valid, bracket, 1.0)) + d_int * x * w - y, 0.0)
    return resid, bracket, (t_n, t_e, t_d, w, e_start, e_max, gap, valid)


def _moe_objective_grad(theta, x, z, e, y, delta):
    """Huber objective and its analytic gradient in the raw parameterization.

    Parameter points driving any run's additive bracket nonpositive get a
    large finite penalty whose gradient pushes the bracket back up.
    """
    alpha, beta, gamma, a_n, a_e, a_d, d_int, f, u, v = theta
    resid, bracket, (t_n, t_e, t_d, w, e_start, e_max, gap, valid) = _moe_residuals(
        theta, x, z, e, y
    )

    # d(log Ehat)/d(e_start), d(log Ehat)/d(e_max); exact at e == 1 too.
    spread = e_start * e_max / gap
    p = e - 1.0 + spread
    e_hat = np.exp(w)
    dw_des = e_hat * spread**2 / (p**2 * e_start**2)
    dw_dem = e_hat * (1.0 / e_max**2 - spread**2 / (p**2 * e_max**2))
    exp_u = e_start - 1.0
    dw_du = (dw_des + dw_dem) * exp_u
    dw_dv = dw_dem * gap

    grad = np.zeros(10)
    if not np.all(valid):
        # Penalty branch: only the violating runs contribute, with slope
        # steering the bracket back above the floor.
        bad = ~valid
        obj = _PENALTY_BASE + float(np.sum(_BRACKET_FLOOR - bracket[bad]))
        s = np.where(bad, -1.0, 0.0)  # d(obj)/d(bracket)
        db_dw = -beta * t_e
        grad[0] = float(np.sum(s * (-x * t_n)))
        grad[1] = float(np.sum(s * (-w * t_e)))
        grad[2] = float(np.sum(s * (-z * t_d)))
        grad[3] = float(np.sum(s * t_n))
        grad[4] = float(np.sum(s * t_e))
        grad[5] = float(np.sum(s * t_d))
        grad[6] = 0.0
        grad[7] = float(np.sum(s))
        grad[8] = float(np.sum(s * db_dw * dw_du))
        grad[9] = float(np.sum(s * db_dw * dw_dv))
        return obj, grad

    a = np.abs(resid)
    obj = float(np.sum(np.where(a <= delta, 0.5 * resid * resid, delta * (a - 0.5 * delta))))
    g = np.clip(resid, -delta, delta)  # d(huber)/d(residual)

    inv_b = 1.0 / bracket
    dr_dw = -beta * t_e * inv_b + d_int * x
    grad[0] = float(np.sum(g * (-x * t_n * inv_b)))
    grad[1] = float(np.sum(g * (-w * t_e * inv_b)))
    grad[2] = float(np.sum(g * (-z * t_d * inv_b)))
    grad[3] = float(np.sum(g * t_n * inv_b))
    grad[4] = float(np.sum(g * t_e * inv_b))
    grad[5] = float(np.sum(g * t_d * inv_b))
    grad[6] = float(np.sum(g * x * w))
    grad[7] = float(np.sum(g * inv_b))
    grad[8] = float(np.sum(g * dr_dw * dw_du))
    grad[9] = float(np.sum(g * dr_dw * dw_dv))
    return obj, grad


def _dense_objective_grad(theta, x, z, y, delta):
    alpha, beta, a_n, a_d, l0 = theta
    t_n = np.exp(a_n - alpha * x)
    t_d = np.exp(a_d - beta * z)
    bracket = t_n + t_d + l0  # l0 bounded >= 0, so always positive
    resid = np.log(bracket) - y
    a = np.abs(resid)
    obj = float(np.sum(np.where(a <= delta, 0.5 * resid * resid, delta * (a - 0.5 * delta))))
    g = np.clip(resid, -delta, delta)
    inv_b = 1.0 / bracket
    grad = np.array(
        [
            float(np.sum(g * (-x * t_n * inv_b))),
            float(np.sum(g * (-z * t_d * inv_b))),
            float(np.sum(g * t_n * inv_b)),
            float(np.sum(g * t_d * inv_b)),
            float(np.sum(g * inv_b)),
        ]
    )
    return obj, grad


def objective(params: ScalingLawParams, runs: Sequence[TrainingRun], config: FitConfig | None = None) -> float:
    """Huber objective of the expert-aware law over a set of runs.

    Sum over runs of huber(log predicted - log observed). Points where the
    additive bracket is nonpositive return a large finite penalty rather
    than raising, so search code can keep moving.
    """
    cfg = config or FitConfig()
    if len(runs) == 0:
        raise ValueError("runs must be non-empty")
    x, z, e, y = _run_arrays(_sorted_runs(runs))
    theta = _theta_from_params(params)
    obj, _ = _moe_objective_grad(theta, x, z, e, y, cfg.huber_delta)
    return obj


def _theta_from_params(params: ScalingLawParams) -> np.ndarray:
    e_start = max(params.e_start, 1.0 + 1.0e-300)
    return np.array(
        [
            params.alpha,
            params.beta,
            params.gamma,
            math.log(params.coef_N),
            math.log(params.coef_E),
            math.log(params.coef_D),
            params.interaction,
            params.irreducible,
            math.log(e_start - 1.0) if e_start > 1.0 else -745.0,
            math.log(params.e_max - e_start),
        ]
    )


def _params_from_theta(theta: np.ndarray) -> ScalingLawParams:
    alpha, beta, gamma, a_n, a_e, a_d, d_int, f, u, v = theta
    e_start = 1.0 + math.exp(u)
    return ScalingLawParams(
        coef_N=math.exp(a_n),
        coef_E=math.exp(a_e),
        coef_D=math.exp(a_d),
        irreducible=float(f),
        alpha=float(alpha),
        beta=float(beta),
        gamma=float(gamma),
        interaction=float(d_int),
        e_start=e_start,
        e_max=e_start + math.exp(v),
    )


def rmsle(params: ScalingLawParams, runs: Sequence[TrainingRun]) -> float:
    """Root-mean-square log-loss error of the law over a set of runs."""
    if len(runs) == 0:
        raise ValueError("runs must be non-empty")
    n = np.array([r.n_dense for r in runs])
    d = np.array([r.d_tokens for r in runs])
    e = np.array([r.experts for r in runs])
    y = np.log([r.val_loss for r in runs])
    pred = np.log(predict_loss(n, d, e, params))
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def rmsle_dense(params: DenseLawParams, runs: Sequence[TrainingRun]) -> float:
    """Root-mean-square log-loss error of the dense law over a set of runs."""
    if len(runs) == 0:
        raise ValueError("runs must be non-empty")
    n = np.array([r.n_dense for r in runs])
    d = np.array([r.d_tokens for r in runs])
    y = np.log([r.val_loss for r in runs])
    pred = np.log(predict_loss_dense(n, d, params))
    return float(np.sqrt(np.mean((pred - y) ** 2)))


def _identifiability_notes(runs: Sequence[TrainingRun], axes: dict[str, str], minimum: int) -> list[str]:
    notes = []
    if len(runs) < minimum:
        notes.append(f"only {len(runs)} runs supplied; at least {minimum} recommended")
    degenerate = [
        label
        for attr, label in axes.items()
        if len({getattr(r, attr) for r in runs}) < 2
    ]
    if degenerate:
        notes.append(
            "degenerate design, exponents unidentifiable along: " + ", ".join(degenerate)
        )
    return notes


def _split_runs(runs: list[TrainingRun], cfg: FitConfig, rng: np.random.Generator):
    n_hold = int(round(cfg.holdout_fraction * len(runs)))
    if n_hold == 0:
        return runs, []
    perm = rng.permutation(len(runs))
    hold_idx = set(perm[:n_hold].tolist())
    train = [r for i, r in enumerate(runs) if i not in hold_idx]
    hold = [r for i, r in enumerate(runs) if i in hold_idx]
    if not train:
        raise ValueError("holdout_fraction leaves no training runs")
    return train, hold


def _sample_start_ids(sizes: tuple[int, ...], cfg: FitConfig, rng: np.random.Generator) -> np.ndarray:
    total = math.prod(sizes)
    if cfg.use_full_grid or cfg.max_starts >= total:
        return np.arange(total)
    return rng.choice(total, size=cfg.max_starts, replace=False)


def _run_starts(starts, objective_grad, bounds, cfg, init_labels):
    """Minimize from every start; return diagnostics and (objective, index, x) winners."""
    lb = np.array([b[0] for b in bounds])
    ub = np.array([b[1] for b in bounds])
    options = {
        "maxiter": cfg.max_iterations,
        "ftol": cfg.convergence_tol,
        "gtol": 0.1 * cfg.convergence_tol,
    }
    diagnostics = []
    results = []
    for idx, x0 in enumerate(starts):
        x0 = np.clip(x0, lb, ub)
        f0, _ = objective_grad(x0)
        res = minimize(
            objective_grad,
            x0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options=options,
        )
        fun = float(res.fun) if np.isfinite(res.fun) else math.inf
        diagnostics.append(
            StartDiagnostic(
                index=idx,
                init=init_labels(x0),
                initial_objective=float(f0),
                final_objective=fun,
                converged=bool(res.success),
            )
        )
        results.append((fun, idx, np.array(res.x)))
    return diagnostics, results


def _moe_residual_vector(theta, x, z, e, y):
    resid, bracket, parts = _moe_residuals(theta, x, z, e, y)
    valid = parts[-1]
    # Out-of-domain points get a huge flat residual; the polish never starts
    # there, this just keeps the trust region away from the cliff.
    return np.where(valid, resid, 1.0e6)


def _moe_residual_jacobian(theta, x, z, e, y):
    alpha, beta, gamma, a_n, a_e, a_d, d_int, f, u, v = theta
    _, bracket, (t_n, t_e, t_d, w, e_start, e_max, gap, valid) = _moe_residuals(
        theta, x, z, e, y
    )
    spread = e_start * e_max / gap
    p = e - 1.0 + spread
    e_hat = np.exp(w)
    dw_des = e_hat * spread**2 / (p**2 * e_start**2)
    dw_dem = e_hat * (1.0 / e_max**2 - spread**2 / (p**2 * e_max**2))
    dw_du = (dw_des + dw_dem) * (e_start - 1.0)
    dw_dv = dw_dem * gap
    inv_b = np.where(valid, 1.0 / np.where(valid, bracket, 1.0), 0.0)
    dr_dw = -beta * t_e * inv_b + d_int * x
    jac = np.column_stack(
        [
            -x * t_n * inv_b,
            -w * t_e * inv_b,
            -z * t_d * inv_b,
            t_n * inv_b,
            t_e * inv_b,
            t_d * inv_b,
            x * w,
            inv_b,
            dr_dw * dw_du,
            dr_dw * dw_dv,
        ]
    )
    jac[~valid, :] = 0.0
    return jac


def _polish_least_squares(fun, jac, x_best, bounds, delta):
    """Trust-region refinement of the winning start.

    ``least_squares`` with the 'huber' loss at f_scale = delta minimizes the
    identical objective (r^2/2 inside delta, delta*(|r| - delta/2) outside)
    and converges far tighter than a quasi-Newton step on this badly
    conditioned surface.
    """
    lb = np.array([b[0] for b in bounds])
    ub = np.array([b[1] for b in bounds])
    eps = float(np.finfo(float).eps)
    try:
        res = least_squares(
            fun,
            np.clip(x_best, lb, ub),
            jac=jac,
            bounds=(lb, ub),
            method="trf",
            loss="huber",
            f_scale=delta,
            ftol=eps,
            xtol=eps,
            gtol=eps,
            max_nfev=2000,
        )
    except ValueError:
        return None
    return np.array(res.x)


_GRID_NOTE = (
    "coefficient grid values are natural-log initializations "
    "(coefficient starts at exp(value)); the interaction coefficient "
    "initializes on the raw grid values"
)
_RMSLE_NOTE = "rmsle is in-sample on the training split; rmsle_holdout scores the held-out split"


def fit_moe(runs: Sequence[TrainingRun], config: FitConfig | None = None) -> FitReport:
    """Fit the expert-aware loss law to observed runs.

    Multi-start L-BFGS-B on the Huber log-space objective. Starts come from
    ``config.grid_spec`` (sampled down to ``max_starts`` by ``rng_seed``);
    the winner is the minimum final objective with start index breaking
    ties, then refined once with tighter tolerances.

    Args:
        runs: observed (n_dense, d_tokens, experts, val_loss) records;
            ideally 10+ spanning at least two values in each axis (fewer is
            allowed but warned about).
        config: fit settings; defaults to :class:`FitConfig`.

    Returns:
        FitReport with fitted params, objective, in-sample and held-out
        rmsle, and per-start diagnostics.

    Raises:
        FitFailedError: if no start produced a usable parameter point.
    """
    cfg = config or FitConfig()
    if len(runs) == 0:
        raise ValueError("runs must be non-empty")
    ordered = _sorted_runs(runs)
    notes = _identifiability_notes(
        ordered, {"n_dense": "N", "d_tokens": "D", "experts": "E"}, minimum=10
    )
    for note in notes:
        warnings.warn(note, IdentifiabilityWarning, stacklevel=2)

    rng = np.random.default_rng(cfg.rng_seed)
    train, hold = _split_runs(ordered, cfg, rng)
    x, z, e, y = _run_arrays(train)

    def fg(theta):
        return _moe_objective_grad(theta, x, z, e, y, cfg.huber_delta)

    grid = cfg.grid_spec
    axes = ("alpha", "beta", "gamma", "log_coef_n", "log_coef_e", "log_coef_d", "interaction", "irreducible")
    values = [np.asarray(grid[name], dtype=float) for name in axes]
    sizes = tuple(len(v) for v in values)
    ids = _sample_start_ids(sizes, cfg, rng)
    u0 = math.log(cfg.e_start_init - 1.0)
    v0 = math.log(cfg.e_max_init - cfg.e_start_init)
    starts = []
    for flat in ids:
        coords = np.unravel_index(int(flat), sizes)
        starts.append(np.array([values[k][coords[k]] for k in range(8)] + [u0, v0]))

    bounds = [
        (0.0, 4.0),  # alpha
        (0.0, 4.0),  # beta
        (0.0, 4.0),  # gamma
        (-60.0, 60.0),  # log coef_N
        (-60.0, 60.0),  # log coef_E
        (-60.0, 60.0),  # log coef_D
        (-10.0, 30.0),  # interaction
        (-10.0, 10.0),  # irreducible
        (-30.0, 10.0),  # u
        (-30.0, 15.0),  # v
    ]

    def init_labels(x0):
        e_start = 1.0 + math.exp(x0[8])
        return {
            "alpha": float(x0[0]),
            "beta": float(x0[1]),
            "gamma": float(x0[2]),
            "log_coef_n": float(x0[3]),
            "log_coef_e": float(x0[4]),
            "log_coef_d": float(x0[5]),
            "interaction": float(x0[6]),
            "irreducible": float(x0[7]),
            "e_start": e_start,
            "e_max": e_start + math.exp(x0[9]),
        }

    diagnostics, results = _run_starts(starts, fg, bounds, cfg, init_labels)

    def res_fun(theta):
        return _moe_residual_vector(theta, x, z, e, y)

    def res_jac(theta):
        return _moe_residual_jacobian(theta, x, z, e, y)

    x_all, z_all, e_all, y_all = _run_arrays(ordered)
    best = None
    for fun, idx, vec in sorted(results, key=lambda t: (t[0], t[1])):
        if not math.isfinite(fun):
            continue
        x_pol = _polish_least_squares(res_fun, res_jac, vec, bounds, cfg.huber_delta)
        if x_pol is not None:
            f_pol, _ = fg(x_pol)
            if f_pol < fun:
                fun, vec = f_pol, x_pol
        # The winner must evaluate cleanly on every supplied run, held-out
        # rows included; otherwise fall through to the next-best start.
        _, bracket_all, _ = _moe_residuals(vec, x_all, z_all, e_all, y_all)
        if np.all(bracket_all > 0):
            best = (fun, idx, vec)
            break
    if best is None:
        raise FitFailedError("no optimizer start produced a usable fit")

    params = _params_from_theta(best[2])
    report_notes = tuple(notes) + (_GRID_NOTE, _RMSLE_NOTE)
    return FitReport(
        params=params,
        objective=best[0],
        rmsle=rmsle(params, train),
        rmsle_holdout=rmsle(params, hold) if hold else None,
        n_runs=len(ordered),
        n_train=len(train),
        n_holdout=len(hold),
        starts_run=len(starts),
        per_start=tuple(diagnostics),
        notes=report_notes,
    )


def fit_dense(runs: Sequence[TrainingRun], config: FitConfig | None = None) -> DenseFitReport:
    """Fit the dense two-term law to single-expert runs.

    Same machinery as :func:`fit_moe` on the reduced parameter vector
    (alpha, beta, log coefficients, irreducible), with the irreducible term
    bounded at zero. Rejects runs with experts != 1.
    """
    cfg = config or FitConfig()
    if len(runs) == 0:
        raise ValueError("runs must be non-empty")
    if any(r.experts != 1 for r in runs):
        raise ValueError("fit_dense requires runs with experts = 1")
    ordered = _sorted_runs(runs)
    notes = _identifiability_notes(
        ordered, {"n_dense": "N", "d_tokens": "D"}, minimum=6
    )
    for note in notes:
        warnings.warn(note, IdentifiabilityWarning, stacklevel=2)

    rng = np.random.default_rng(cfg.rng_seed)
    train, hold = _split_runs(ordered, cfg, rng)
    x, z, _, y = _run_arrays(train)

    def fg(theta):
        return _dense_objective_grad(theta, x, z, y, cfg.huber_delta)

    grid = cfg.grid_spec
    axes = ("alpha", "beta", "log_coef_n", "log_coef_d", "irreducible")
    values = [np.asarray(grid[name], dtype=float) for name in axes]
    sizes = tuple(len(v) for v in values)
    ids = _sample_start_ids(sizes, cfg, rng)
    starts = []
    for flat in ids:
        coords = np.unravel_index(int(flat), sizes)
        starts.append(np.array([values[k][coords[k]] for k in range(5)]))

    # Positive-exponent floor keeps the fitted law inside its type's domain.
    bounds = [
        (1.0e-9, 4.0),  # alpha
        (1.0e-9, 4.0),  # beta
        (-60.0, 60.0),  # log coef_N
        (-60.0, 60.0),  # log coef_D
        (0.0, 50.0),  # l0
    ]

    def init_labels(x0):
        return {
            "alpha": float(x0[0]),
            "beta": float(x0[1]),
            "log_coef_n": float(x0[2]),
            "log_coef_d": float(x0[3]),
            "l0": float(x0[4]),
        }

    diagnostics, results = _run_starts(starts, fg, bounds, cfg, init_labels)
    finite = sorted((r for r in results if math.isfinite(r[0])), key=lambda t: (t[0], t[1]))
    if not finite:
        raise FitFailedError("no optimizer start produced a usable fit")
    fun, idx, vec = finite[0]

    def res_fun(theta):
        al, be, a_n, a_d, l0 = theta
        return np.log(np.exp(a_n - al * x) + np.exp(a_d - be * z) + l0) - y

    def res_jac(theta):
        al, be, a_n, a_d, l0 = theta
        t_n = np.exp(a_n - al * x)
        t_d = np.exp(a_d - be * z)
        inv_b = 1.0 / (t_n + t_d + l0)
        return np.column_stack(
            [-x * t_n * inv_b, -z * t_d * inv_b, t_n * inv_b, t_d * inv_b, inv_b]
        )

    x_pol = _polish_least_squares(res_fun, res_jac, vec, bounds, cfg.huber_delta)
    if x_pol is not None:
        f_pol, _ = fg(x_pol)
        if f_pol < fun:
            fun, vec = f_pol, x_pol

    alpha, beta, a_n, a_d, l0 = vec
    params = DenseLawParams(
        l0=float(l0),
        coef_N=math.exp(a_n),
        coef_D=math.exp(a_d),
        alpha=float(alpha),
        beta=float(beta),
    )
    report_notes = tuple(notes) + (_GRID_NOTE, _RMSLE_NOTE)
    return DenseFitReport(
        params=params,
        objective=fun,
        rmsle=rmsle_dense(params, train),
        rmsle_holdout=rmsle_dense(params, hold) if hold else None,
        n_runs=len(ordered),
        n_train=len(train),
        n_holdout=len(hold),
        starts_run=len(starts),
        per_start=tuple(diagnostics),
        notes=report_notes,
    )


def runs_from_csv(path) -> list[TrainingRun]:
    """Load training runs from a CSV with columns n_dense,d_tokens,experts,val_loss.

    Extra columns are ignored; a missing column or unparseable cell raises
    ValueError naming the column (and row).
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in RUNS_CSV_COLUMNS if c not in header]
        if missing:
            raise ValueError(f"runs CSV missing column(s): {', '.join(missing)}")
        runs = []
        for lineno, row in enumerate(reader, start=2):
            values = {}
            for col in RUNS_CSV_COLUMNS:
                cell = row.get(col)
                try:
                    values[col] = float(cell)
                except (TypeError, ValueError):
                    raise ValueError(
                        f"runs CSV line {lineno}: column {col!r} has "
                        f"unparseable value {cell!r}"
                    ) from None
            runs.append(TrainingRun(**values))
    if not runs:
        raise ValueError("runs CSV contains no data rows")
    return runs


def runs_to_csv(runs: Iterable[TrainingRun], path) -> None:
    """Write training runs as CSV with the canonical four-column header."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RUNS_CSV_COLUMNS)
        for r in runs:
            writer.writerow([repr(r.n_dense), repr(r.d_tokens), repr(r.experts), repr(r.val_loss)])
