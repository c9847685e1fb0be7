"""Maximum-likelihood training: ADAM warm phase, BFGS refinement, validation checkpointing."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from udeuq.core import NEGLL_PENALTY, MlpSpec, ParamSpace, UdeProblem, is_penalty, mlp_init
from udeuq.errors import ConfigError
from udeuq.likelihood import STREAM_START, Dataset, UdeLikelihood, rng_for, split_indices
from udeuq.solve import TRAINING_SOLVER, SolverConfig

Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class FitConfig:
    adam_epochs: int = 4000
    adam_lr: float = 1e-3
    qn_max_iters: int = 1000
    l2_penalty: float = 1e-5
    val_fraction: float = 0.2
    seed: int = 0
    qn_gtol: float = 1e-8
    qn_ftol: float = 1e-12

    def __post_init__(self):
        if self.adam_epochs < 0 or self.qn_max_iters < 0:
            raise ConfigError("iteration counts must be non-negative")
        if self.l2_penalty < 0:
            raise ConfigError("l2_penalty must be non-negative")
        if not self.adam_lr > 0:
            raise ConfigError("adam_lr must be positive")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "FitConfig":
        return cls(**d)


@dataclass
class OptTrace:
    """Accepted iterates of one optimizer phase."""

    theta: np.ndarray  # final accepted iterate
    value: float
    values: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    reason: str = ""


def _rejected(f: float) -> bool:
    return is_penalty(f)


def adam_run(
    objective: Objective,
    theta0,
    epochs: int,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    on_accept: Callable[[np.ndarray, float], None] | None = None,
) -> OptTrace:
    """Full-batch ADAM with bias correction.

    ``objective`` returns ``(value, gradient)``.  A penalty-valued evaluation
    skips that update: the iterate falls back to the last finite point and the
    step size is halved so the schedule can leave the failing region.
    """
    theta = np.array(theta0, dtype=float)
    f, g = objective(theta)
    if _rejected(f):
        return OptTrace(theta, f, [], 0, False, "start point is penalty-valued")
    if on_accept:
        on_accept(theta, f)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    good_theta, good_f, good_g = theta.copy(), f, g.copy()
    values = [f]
    scale = 1.0
    for k in range(1, epochs + 1):
        m = beta1 * m + (1 - beta1) * good_g
        v = beta2 * v + (1 - beta2) * good_g * good_g
        mhat = m / (1 - beta1**k)
        vhat = v / (1 - beta2**k)
        theta = good_theta - scale * lr * mhat / (np.sqrt(vhat) + eps)
        f, g = objective(theta)
        if _rejected(f):
            scale *= 0.5
            continue
        good_theta, good_f, good_g = theta, f, g
        values.append(f)
        if on_accept:
            on_accept(theta, f)
    return OptTrace(good_theta, good_f, values, epochs, False, "epoch budget reached")


def quasi_newton_run(
    objective: Objective,
    theta0,
    max_iters: int,
    gtol: float = 1e-8,
    ftol: float = 1e-12,
    c1: float = 1e-4,
    max_backtracks: int = 40,
    on_accept: Callable[[np.ndarray, float], None] | None = None,
) -> OptTrace:
    """Dense BFGS on the inverse Hessian with Armijo backtracking.

    Penalty-valued trial points fail the line search.  Accepted objective
    values are non-increasing by construction.
    """
    theta = np.array(theta0, dtype=float)
    f, g = objective(theta)
    if _rejected(f):
        return OptTrace(theta, f, [], 0, False, "start point is penalty-valued")
    if on_accept:
        on_accept(theta, f)
    n = theta.size
    H = np.eye(n)
    fresh = True
    values = [f]
    for it in range(max_iters):
        if np.max(np.abs(g)) < gtol:
            return OptTrace(theta, f, values, it, True, "gradient tolerance")
        p = -H @ g
        slope = float(g @ p)
        if not slope < 0:
            H, fresh = np.eye(n), True
            p, slope = -g, -float(g @ g)
        # unit step only once H carries curvature information
        step = min(1.0, 1.0 / float(np.max(np.abs(p)))) if fresh else 1.0
        accepted = False
        for _ in range(max_backtracks):
            trial = theta + step * p
            ft, gt = objective(trial)
            if not _rejected(ft) and ft <= f + c1 * step * slope:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            if fresh:
                return OptTrace(theta, f, values, it, False, "line search failed")
            H, fresh = np.eye(n), True
            continue
        s = trial - theta
        y = gt - g
        sy = float(s @ y)
        f_old = f
        theta, f, g = trial, ft, gt
        values.append(f)
        if on_accept:
            on_accept(theta, f)
        if sy > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            if fresh:
                H = np.eye(n) * (sy / float(y @ y))
            rho = 1.0 / sy
            Hy = H @ y
            H = H - rho * (np.outer(s, Hy) + np.outer(Hy, s)) + (rho * rho * float(y @ Hy) + rho) * np.outer(s, s)
            fresh = False
        if abs(f_old - f) <= ftol * max(abs(f), 1.0):
            return OptTrace(theta, f, values, it + 1, True, "objective tolerance")
    if max_iters > 0 and np.max(np.abs(g)) < gtol:
        return OptTrace(theta, f, values, max_iters, True, "gradient tolerance")
    return OptTrace(theta, f, values, max_iters, False, "iteration budget reached")


# ---------------------------------------------------------------------------
# Single UDE fit
# ---------------------------------------------------------------------------


@dataclass
class FitResult:
    theta_best_raw: np.ndarray
    negll_train: float
    negll_val: float
    negll_full: float
    converged: bool
    seed: int
    iterations: dict = field(default_factory=dict)
    theta0_raw: np.ndarray | None = None
    message: str = ""

    def to_dict(self) -> dict:
        d = {
            "theta_best_raw": [float(v) for v in self.theta_best_raw],
            "negll_train": float(self.negll_train),
            "negll_val": float(self.negll_val),
            "negll_full": float(self.negll_full),
            "converged": bool(self.converged),
            "seed": int(self.seed),
            "iterations": dict(self.iterations),
            "message": self.message,
        }
        if self.theta0_raw is not None:
            d["theta0_raw"] = [float(v) for v in self.theta0_raw]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        return cls(
            np.asarray(d["theta_best_raw"], dtype=float),
            d["negll_train"],
            d["negll_val"],
            d["negll_full"],
            d["converged"],
            d["seed"],
            d.get("iterations", {}),
            np.asarray(d["theta0_raw"], dtype=float) if "theta0_raw" in d else None,
            d.get("message", ""),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> "FitResult":
        return cls.from_dict(json.loads(s))


def sample_start_point(
    space: ParamSpace, seed: int, net_init: str = "glorot_uniform", mlp: MlpSpec | None = None
) -> np.ndarray:
    """Mechanistic and noise entries from their start distributions, network per ``net_init``.

    An all-zero tanh network never leaves zero under gradient training except
    for its output bias, so the default start is a Glorot draw.
    """
    rng = rng_for(seed, STREAM_START)
    theta = np.zeros(space.total_dim)
    for seg, sl in zip(space.segments, space.slices().values()):
        if seg.role == "net":
            if net_init != "zeros":
                spec = mlp or MlpSpec()
                if spec.n_params != seg.length:
                    raise ConfigError(f"network segment has {seg.length} entries; pass the matching MLP layout")
                theta[sl] = mlp_init(spec, seed, net_init)
            continue
        dist = seg.start or seg.prior
        draw = dist.sample(rng, seg.length)
        theta[sl] = draw if dist.applies_on == "raw" else seg.transform.to_raw(draw)
    return theta


def fit_single(
    problem: UdeProblem,
    space: ParamSpace,
    data: Dataset,
    cfg: FitConfig,
    theta0=None,
    solver: SolverConfig = TRAINING_SOLVER,
    net_init: str = "glorot_uniform",
) -> FitResult:
    """Train one UDE from ``theta0`` (default: a start point drawn with ``cfg.seed``)."""
    lik = UdeLikelihood(problem, space, data, solver)
    if theta0 is None:
        theta0 = sample_start_point(space, cfg.seed, net_init, problem.mlp)
    theta0 = space._check(theta0).copy()
    tr_idx, va_idx = split_indices(data.n_t, cfg.seed, cfg.val_fraction)
    w_tr = np.zeros(data.n_t)
    w_tr[tr_idx] = 1.0
    w_va = np.zeros(data.n_t)
    w_va[va_idx] = 1.0
    net_sl = space.slices()[space.by_role("net")[0].name]
    l2 = cfg.l2_penalty

    last = {}
    best = {"val": math.inf, "theta": theta0, "train": NEGLL_PENALTY}

    def objective(theta):
        tr, g, va = lik.split_eval(theta, w_tr, w_va)
        if is_penalty(tr):
            return NEGLL_PENALTY, np.zeros_like(theta)
        net = theta[net_sl]
        g = g.copy()
        g[net_sl] += 2.0 * l2 * net
        last["theta"], last["train"], last["val"] = theta, tr, va
        return tr + l2 * float(net @ net), g

    def on_accept(theta, f):
        # the accepted point is always the most recent evaluation
        if last.get("theta") is not theta:
            return
        if last["val"] < best["val"]:
            best.update(val=last["val"], theta=theta.copy(), train=last["train"])

    a = adam_run(objective, theta0, cfg.adam_epochs, cfg.adam_lr, on_accept=on_accept)
    q = quasi_newton_run(objective, a.theta, cfg.qn_max_iters, cfg.qn_gtol, cfg.qn_ftol, on_accept=on_accept)
    iterations = {"adam": a.iterations, "qn": q.iterations}
    if not math.isfinite(best["val"]):
        return FitResult(theta0, NEGLL_PENALTY, NEGLL_PENALTY, NEGLL_PENALTY, False, cfg.seed, iterations, theta0, "no finite evaluation")
    full = lik.negll(best["theta"])
    return FitResult(best["theta"], best["train"], best["val"], full, q.converged, cfg.seed, iterations, theta0, q.reason)
