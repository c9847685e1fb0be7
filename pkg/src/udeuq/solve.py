"""ODE integration on fixed output grids and exact discrete gradients.

Two integrators are provided: classical RK4 on a step-aligned grid and an
adaptive Dormand-Prince 5(4) pair with PI step-size control.  For the UDE
vector fields of :mod:`udeuq.core` the RK4 path runs on compiled kernels with
a hand-written discrete adjoint, so gradients are exact for the discretised
solution.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from udeuq import _kernels as K
from udeuq.core import MlpSpec, UdeVectorField, is_penalty
from udeuq.errors import ConfigError, ContractError, SimulationError


@dataclass(frozen=True)
class SolverConfig:
    method: str = "rk4_fixed"  # rk4_fixed | dopri45_adaptive
    fixed_step: float | None = None  # None -> span / n_steps
    n_steps: int = 1000
    abs_tol: float = 1e-8
    rel_tol: float = 1e-8
    max_steps: int = 100_000

    def __post_init__(self):
        if self.method not in ("rk4_fixed", "dopri45_adaptive"):
            raise ConfigError(f"unknown solver method {self.method!r}")
        if self.fixed_step is not None and not self.fixed_step > 0:
            raise ConfigError("fixed_step must be positive")
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ConfigError("tolerances must be positive")
        if self.n_steps < 1 or self.max_steps < 1:
            raise ConfigError("step counts must be positive")

    def step_for(self, span: float) -> float:
        return self.fixed_step if self.fixed_step is not None else span / self.n_steps

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "fixed_step": self.fixed_step,
            "n_steps": self.n_steps,
            "abs_tol": self.abs_tol,
            "rel_tol": self.rel_tol,
            "max_steps": self.max_steps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        return cls(**d)


TRAINING_SOLVER = SolverConfig("rk4_fixed", n_steps=1000)
GENERATION_SOLVER = SolverConfig("dopri45_adaptive", abs_tol=1e-8, rel_tol=1e-8)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    success: bool = True
    failure_reason: str | None = None


def _check_times(out_times, t0: float) -> np.ndarray:
    out = np.asarray(out_times, dtype=float).ravel()
    if out.size == 0:
        raise ContractError("out_times must not be empty")
    if np.any(np.diff(out) <= 0):
        raise ContractError("out_times must be strictly increasing")
    if out[0] < t0:
        raise ContractError(f"first output time {out[0]} precedes t0={t0}")
    return out


def rk4_grid(t0: float, out_times, step: float, tstops=()) -> tuple[np.ndarray, np.ndarray]:
    """Step-aligned RK4 grid.

    Every output time and breakpoint is a grid node; each interval between
    consecutive nodes is split into equal substeps no longer than ``step``.
    Returns the node array and the node index of every output time.
    """
    out_times = np.asarray(out_times, dtype=float)
    stops = [s for s in tstops if t0 < s < out_times[-1]]
    nodes = np.unique(np.concatenate([[t0], out_times, stops]))
    pieces = [nodes[:1]]
    for a, b in zip(nodes[:-1], nodes[1:]):
        k = max(1, int(math.ceil((b - a) / step - 1e-9)))
        pieces.append(np.linspace(a, b, k + 1)[1:])
    ts = np.concatenate(pieces)
    idx = np.searchsorted(ts, out_times)
    return ts, idx


# ---------------------------------------------------------------------------
# Generic integrators
# ---------------------------------------------------------------------------


def _call(rhs, t, x, theta):
    return np.asarray(rhs(t, x) if theta is None else rhs(t, x, theta), dtype=float)


def _nudge(t_lo, t_hi, stopset):
    """One-sided evaluation times for a step starting/ending on a breakpoint."""
    eps = 1e-12 * max(1.0, abs(t_lo), abs(t_hi))
    a = t_lo + eps if t_lo in stopset else t_lo
    b = t_hi - eps if t_hi in stopset else t_hi
    return a, b


def _rk4_generic(rhs, x0, t0, out_times, theta, step, tstops) -> Trajectory:
    ts, idx = rk4_grid(t0, out_times, step, tstops)
    stopset = set(float(s) for s in tstops)
    x = np.array(x0, dtype=float)
    states = np.empty((ts.size, x.size))
    states[0] = x
    try:
        for s in range(ts.size - 1):
            t, h = ts[s], ts[s + 1] - ts[s]
            ta, tb = _nudge(t, ts[s + 1], stopset) if stopset else (t, ts[s + 1])
            tm = t + 0.5 * h
            k1 = _call(rhs, ta, x, theta)
            k2 = _call(rhs, tm, x + 0.5 * h * k1, theta)
            k3 = _call(rhs, tm, x + 0.5 * h * k2, theta)
            k4 = _call(rhs, tb, x + h * k3, theta)
            x = x + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(x)):
                return Trajectory(out_times, states[idx], False, f"non-finite state at t={ts[s + 1]:.6g}")
            states[s + 1] = x
    except (SimulationError, ArithmeticError, ValueError) as exc:
        return Trajectory(out_times, np.full((out_times.size, x.size), np.nan), False, str(exc))
    return Trajectory(out_times, states[idx], True, None)


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


def _dopri_generic(rhs, x0, t0, out_times, theta, cfg: SolverConfig, tstops) -> Trajectory:
    x = np.array(x0, dtype=float)
    n_x = x.size
    targets = np.unique(np.concatenate([out_times, [s for s in tstops if t0 < s < out_times[-1]]]))
    stopset = set(float(s) for s in tstops)
    out = np.full((out_times.size, n_x), np.nan)
    out_pos = {float(t): i for i, t in enumerate(out_times)}
    if out_times[0] == t0:
        out[0] = x
    t = t0
    atol, rtol = cfg.abs_tol, cfg.rel_tol
    safety, facmin, facmax, beta_pi = 0.9, 0.2, 10.0, 0.04
    expo = 0.2 - 0.75 * beta_pi
    err_old = 1e-4
    span = out_times[-1] - t0

    def f(tt, xx):
        return _call(rhs, tt, xx, theta)

    try:
        # initial step (Hairer & Wanner heuristic)
        f0 = f(t0 + (1e-12 if t0 in stopset else 0.0), x)
        sc = atol + rtol * np.abs(x)
        d0, d1 = np.sqrt(np.mean((x / sc) ** 2)), np.sqrt(np.mean((f0 / sc) ** 2))
        h = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
        h = min(h, span)
        x1 = x + h * f0
        d2 = np.sqrt(np.mean(((f(t0 + h, x1) - f0) / sc) ** 2)) / h
        h1 = 1e-6 * max(1e-6, h * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
        h = min(100 * h, h1, span)

        n_steps = 0
        ti = 0
        k = np.empty((7, n_x))
        fsal_ok = False
        while ti < targets.size:
            target = targets[ti]
            if n_steps >= cfg.max_steps:
                return Trajectory(out_times, out, False, f"max_steps={cfg.max_steps} exceeded at t={t:.6g}")
            hit = t + h >= target - 1e-12 * max(1.0, abs(target))
            h_try = target - t if hit else h
            ta, tb = _nudge(t, t + h_try if not hit else target, stopset) if stopset else (t, t + h_try)
            if not fsal_ok:
                k[0] = f(ta, x)
            for s in range(1, 7):
                ts_ = t + _C[s] * h_try
                if s >= 5:
                    ts_ = tb
                k[s] = f(ts_, x + h_try * (np.asarray(_A[s]) @ k[:s]))
            x_new = x + h_try * (_B5 @ k)
            err_vec = h_try * (_E @ k)
            sc = atol + rtol * np.maximum(np.abs(x), np.abs(x_new))
            err = math.sqrt(float(np.mean((err_vec / sc) ** 2)))
            n_steps += 1
            if not np.isfinite(err) or not np.all(np.isfinite(x_new)):
                h = h_try * 0.1
                fsal_ok = False
                if h < 1e-14 * max(1.0, abs(t)):
                    return Trajectory(out_times, out, False, f"non-finite state near t={t:.6g}")
                continue
            if err <= 1.0:
                err = max(err, 1e-10)
                fac = min(facmax, max(facmin, safety * err**-expo * err_old**beta_pi))
                err_old = err
                t_new = target if hit else t + h_try
                x = x_new
                crossing = t_new in stopset
                k[0] = k[6]
                fsal_ok = not crossing
                t = t_new
                if hit:
                    if t in out_pos:
                        out[out_pos[t]] = x
                    ti += 1
                    h = max(h, h_try * fac) if h_try < h else h_try * fac
                else:
                    h = h_try * fac
            else:
                fac = max(facmin, safety * err**-expo)
                h = h_try * fac
                fsal_ok = False
                if h < 1e-14 * max(1.0, abs(t)):
                    return Trajectory(out_times, out, False, f"step size underflow at t={t:.6g}")
    except (SimulationError, ArithmeticError, ValueError) as exc:
        return Trajectory(out_times, out, False, str(exc))
    return Trajectory(out_times, out, True, None)


def integrate(
    rhs: Callable,
    x0,
    out_times,
    theta_raw=None,
    cfg: SolverConfig = TRAINING_SOLVER,
    *,
    t0: float | None = None,
    tstops=(),
) -> Trajectory:
    """Integrate ``rhs`` from ``t0`` and report the state at every output time.

    ``rhs`` is called as ``rhs(t, x, theta_raw)`` or, when ``theta_raw`` is
    None, as ``rhs(t, x)``.  ``tstops`` are breakpoints of a piecewise rhs:
    they become step boundaries and the rhs is evaluated one-sidedly there.
    Numerical failures return ``success=False`` instead of raising.
    """
    field = rhs if isinstance(rhs, UdeVectorField) else None
    if t0 is None:
        t0 = field.problem.t_span[0] if field is not None else float(np.asarray(out_times, dtype=float).ravel()[0])
    out = _check_times(out_times, t0)
    if field is not None and cfg.method == "rk4_fixed" and not tstops:
        return simulate(field, theta_raw, out, cfg, x0=x0)
    if cfg.method == "rk4_fixed":
        span = field.problem.t_span[1] - field.problem.t_span[0] if field is not None else out[-1] - t0
        return _rk4_generic(rhs, x0, t0, out, theta_raw, cfg.step_for(span), tstops)
    return _dopri_generic(rhs, x0, t0, out, theta_raw, cfg, tstops)


# ---------------------------------------------------------------------------
# Compiled UDE path
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=None)
def _mlp_layout(spec: MlpSpec):
    sizes = np.asarray(spec.layer_sizes, dtype=np.int64)
    poff = np.zeros(len(sizes) - 1, dtype=np.int64)
    aoff = np.zeros(len(sizes), dtype=np.int64)
    for l in range(1, len(sizes)):
        aoff[l] = aoff[l - 1] + sizes[l - 1]
    for l in range(1, len(sizes) - 1):
        poff[l] = poff[l - 1] + sizes[l - 1] * sizes[l] + sizes[l]
    return sizes, poff, aoff, int(aoff[-1] + sizes[-1])


@functools.lru_cache(maxsize=64)
def _grid_cached(t0, out_key, step):
    ts, idx = rk4_grid(t0, np.frombuffer(out_key), step)
    ts.setflags(write=False)
    idx.setflags(write=False)
    return ts, idx


class _Tape:
    """Forward-pass storage for one compiled RK4 solve."""

    __slots__ = ("field", "theta", "ts", "idx", "stages", "extra", "mech_raw")


def _forward(field: UdeVectorField, theta_raw, out_times, cfg: SolverConfig, x0=None):
    problem = field.problem
    if cfg.method != "rk4_fixed":
        raise ConfigError("compiled solves and gradients require the rk4_fixed method")
    theta = np.ascontiguousarray(theta_raw, dtype=float)
    if theta.shape != (field.space.total_dim,):
        raise ContractError(f"theta must have length {field.space.total_dim}")
    t0, t1 = problem.t_span
    out = np.ascontiguousarray(out_times, dtype=float)
    ts, idx = _grid_cached(float(t0), out.tobytes(), float(cfg.step_for(t1 - t0)))
    if ts.size - 1 > cfg.max_steps:
        return None, f"grid needs {ts.size - 1} steps > max_steps={cfg.max_steps}"
    sizes, poff, aoff, n_act = _mlp_layout(problem.mlp)
    net = np.ascontiguousarray(field.net_params(theta))
    mech = field.mech(theta)
    x0 = np.asarray(problem.x0 if x0 is None else x0, dtype=float)
    if x0.shape != (problem.n_x,):
        raise ContractError(f"x0 must have length {problem.n_x}")
    n = ts.size - 1
    tape = _Tape()
    tape.field, tape.theta, tape.ts, tape.idx = field, theta, ts, idx
    if problem.is_seir:
        acts = np.empty((2 * n + 1, n_act))
        outs = np.empty(2 * n + 1)
        betas = np.empty(2 * n + 1)
        ok = K.seir_betas(net, sizes, poff, aoff, problem.mlp.input_scale, ts, problem.beta_bounded, acts, outs, betas)
        if not ok:
            return None, "non-finite transmission rate from network"
        states = np.empty((n + 1, 4))
        stages = np.empty((n, 4, 4))
        ok = K.seir_forward(x0, ts, betas, mech["alpha"], mech["gamma"], states, stages)
        tape.extra = (acts, outs, betas, net, mech)
    else:
        states1 = np.empty(n + 1)
        stages = np.empty((n, 4))
        acts = np.empty((n, 4, n_act))
        ok = K.quad_forward(
            float(x0[0]), ts, mech["alpha"], net, sizes, poff, aoff, problem.mlp.input_scale, states1, stages, acts
        )
        states = states1[:, None]
        tape.extra = (acts, net, mech)
    if not ok:
        return None, "non-finite or degenerate state during RK4 integration"
    tape.stages = stages
    return (states[idx], tape), None


def simulate(field: UdeVectorField, theta_raw, out_times, cfg: SolverConfig = TRAINING_SOLVER, x0=None) -> Trajectory:
    """Solve a UDE at ``out_times``; dispatches to the compiled RK4 kernels."""
    out = _check_times(out_times, field.problem.t_span[0])
    if cfg.method != "rk4_fixed":
        x0 = field.problem.x0 if x0 is None else x0
        return _dopri_generic(field, x0, field.problem.t_span[0], out, np.asarray(theta_raw, float), cfg, ())
    res, reason = _forward(field, theta_raw, out, cfg, x0)
    if res is None:
        return Trajectory(out, np.full((out.size, field.problem.n_x), np.nan), False, reason)
    return Trajectory(out, res[0].copy(), True, None)


def simulate_with_adjoint(field: UdeVectorField, theta_raw, out_times, cfg: SolverConfig = TRAINING_SOLVER, x0=None):
    """Solve and return ``(trajectory, vjp)``.

    ``vjp(seed)`` maps an adjoint seed of shape ``(n_out, n_x)`` (dL/dstates at
    the output times) to dL/dtheta_raw, exact for the RK4 discretisation.
    ``vjp`` is None when the solve failed.
    """
    out = _check_times(out_times, field.problem.t_span[0])
    res, reason = _forward(field, theta_raw, out, cfg, x0)
    if res is None:
        return Trajectory(out, np.full((out.size, field.problem.n_x), np.nan), False, reason), None
    states, tape = res
    return Trajectory(out, states.copy(), True, None), functools.partial(_backward, tape)


def _backward(tape: _Tape, seed) -> np.ndarray:
    field = tape.field
    problem, space = field.problem, field.space
    seed = np.asarray(seed, dtype=float).reshape(tape.idx.size, problem.n_x)
    n = tape.ts.size - 1
    seeds = np.zeros((n + 1, problem.n_x))
    np.add.at(seeds, tape.idx, seed)
    sizes, poff, aoff, _ = _mlp_layout(problem.mlp)
    sl = space.slices()
    grad = np.zeros(space.total_dim)
    gnet = np.zeros(problem.mlp.n_params)
    if problem.is_seir:
        acts, outs, betas, net, mech = tape.extra
        gbetas = np.zeros(2 * n + 1)
        _, ga, gg = K.seir_backward(tape.ts, tape.stages, betas, mech["alpha"], mech["gamma"], seeds, gbetas)
        K.seir_net_grad(net, sizes, poff, aoff, acts, outs, betas, gbetas, problem.beta_bounded, gnet)
        dmech = {"alpha": ga, "gamma": gg}
    else:
        acts, net, mech = tape.extra
        _, ga = K.quad_backward(
            tape.ts, tape.stages, acts, mech["alpha"], net, sizes, poff, aoff, problem.mlp.input_scale, seeds[:, 0], gnet
        )
        dmech = {"alpha": ga}
    for name, g in dmech.items():
        seg = space.segment(name)
        grad[sl[name]] = g * seg.transform.derivative(tape.theta[sl[name]])
    grad[sl["net"]] = gnet
    return grad


def gradient_of(loss, theta_raw) -> np.ndarray:
    """Gradient of a solution functional with respect to the raw parameters.

    ``loss`` must expose ``value_and_grad(theta) -> (value, grad)`` computed by
    reverse accumulation through the RK4 stepper (see
    :class:`udeuq.likelihood.UdeLikelihood`).
    """
    if not hasattr(loss, "value_and_grad"):
        raise ContractError("loss must provide value_and_grad(theta)")
    value, grad = loss.value_and_grad(np.asarray(theta_raw, dtype=float))
    if is_penalty(value) or not np.all(np.isfinite(grad)):
        raise SimulationError("loss is not finite at the requested parameters")
    return np.asarray(grad, dtype=float)


def with_solver_step(cfg: SolverConfig, n_steps: int) -> SolverConfig:
    return replace(cfg, n_steps=n_steps, fixed_step=None)
