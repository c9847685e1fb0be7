"""NUTS, parallel tempering, warm starts and convergence diagnostics.

The sampler follows the multinomial variant of the No-U-Turn sampler: trees
are grown by doubling in a random direction, states are drawn in proportion
to exp(-H) with a bias towards the newer subtree, and growth stops on the
generalized no-U-turn criterion evaluated on the full tree and on both
sub-tree junctions.  Warmup uses dual averaging on the step size and windowed
diagonal mass-matrix estimation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import special, stats

from udeuq.core import LOG_SENTINEL, ParamSpace, UdeProblem, is_log_sentinel
from udeuq.errors import ContractError, InitializationError
from udeuq.likelihood import Dataset
from udeuq.optimize import FitConfig, fit_single, sample_start_point

MAX_DELTA_H = 1000.0


def _as_value_and_grad(log_post: Callable, grad: Callable | None) -> Callable:
    """Normalise the two calling conventions to ``theta -> (value, grad)``."""
    if grad is None:
        return log_post
    return lambda th: (log_post(th), grad(th))


@dataclass
class _Point:
    q: np.ndarray
    lp: float  # untempered log density
    g: np.ndarray  # untempered gradient


@dataclass
class _Leapfrog:
    q: np.ndarray
    p: np.ndarray
    lp: float
    g: np.ndarray


def _logaddexp(a: float, b: float) -> float:
    return float(np.logaddexp(a, b))


class _Tree:
    """Mutable bookkeeping for one NUTS transition."""

    def __init__(self, kernel: "NutsKernel", H0: float, rng: np.random.Generator):
        self.k = kernel
        self.H0 = H0
        self.rng = rng
        self.n_leapfrog = 0
        self.sum_metro_prob = 0.0
        self.divergent = False

    def build(self, z: _Leapfrog, depth: int, sign: int):
        """Extend ``z`` by 2**depth leapfrog steps.

        Returns (valid, propose, p_sharp_beg, p_sharp_end, rho, p_beg, p_end, log_sum_weight).
        """
        k = self.k
        if depth == 0:
            k.leapfrog(z, sign * k.step_size)
            self.n_leapfrog += 1
            h = k.hamiltonian(z)
            if not math.isfinite(h):
                h = math.inf
            if h - self.H0 > MAX_DELTA_H:
                self.divergent = True
            lw = self.H0 - h
            self.sum_metro_prob += 1.0 if lw > 0 else math.exp(lw)
            ps = k.inv_metric * z.p
            prop = _Point(z.q.copy(), z.lp, z.g.copy())
            return (not self.divergent, prop, ps, ps, z.p.copy(), z.p.copy(), z.p.copy(), lw)

        ok, prop_i, ps_beg, ps_iend, rho_i, p_beg, p_iend, lw_i = self.build(z, depth - 1, sign)
        if not ok:
            return (False, None, None, None, None, None, None, -math.inf)
        ok, prop_f, ps_fbeg, ps_end, rho_f, p_fbeg, p_end, lw_f = self.build(z, depth - 1, sign)
        if not ok:
            return (False, None, None, None, None, None, None, -math.inf)
        lw = _logaddexp(lw_i, lw_f)
        # progressive (uniform) sampling between the two halves
        if lw_f > lw or self.rng.uniform() < math.exp(lw_f - lw):
            prop = prop_f
        else:
            prop = prop_i
        rho = rho_i + rho_f
        persist = _no_uturn(ps_beg, ps_end, rho)
        persist = persist and _no_uturn(ps_beg, ps_fbeg, rho_i + p_fbeg)
        persist = persist and _no_uturn(ps_iend, ps_end, rho_f + p_iend)
        return (persist, prop, ps_beg, ps_end, rho, p_beg, p_end, lw)


def _no_uturn(p_sharp_minus, p_sharp_plus, rho) -> bool:
    return float(p_sharp_plus @ rho) > 0 and float(p_sharp_minus @ rho) > 0


@dataclass
class _DualAveraging:
    mu: float
    delta: float = 0.8
    gamma: float = 0.05
    t0: float = 10.0
    kappa: float = 0.75
    counter: int = 0
    s_bar: float = 0.0
    x_bar: float = 0.0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1 - eta) * self.s_bar + eta * (self.delta - accept_stat)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1 - x_eta) * self.x_bar + x_eta * x
        return math.exp(x)


def _warmup_windows(n_warmup: int) -> tuple[int, int, int]:
    """(initial fast buffer, final fast buffer, first slow window)."""
    init, term, base = 75, 50, 25
    if n_warmup < 20:
        return n_warmup, 0, 0
    if init + term + base > n_warmup:
        init = int(0.15 * n_warmup)
        term = int(0.1 * n_warmup)
        base = n_warmup - init - term
    return init, term, base


class NutsKernel:
    """One NUTS chain on ``log_post / temperature`` with its own adaptation state."""

    def __init__(
        self,
        value_and_grad: Callable,
        dim: int,
        temperature: float = 1.0,
        max_depth: int = 10,
        target_accept: float = 0.8,
        step_size: float = 1.0,
    ):
        self.f = value_and_grad
        self.dim = dim
        self.temperature = float(temperature)
        self.max_depth = max_depth
        self.target_accept = target_accept
        self.step_size = step_size
        self.inv_metric = np.ones(dim)

    # --- Hamiltonian pieces (tempered potential) ---
    def evaluate(self, q) -> _Point:
        lp, g = self.f(q)
        lp = float(lp)
        if not math.isfinite(lp):
            lp = LOG_SENTINEL
        return _Point(np.array(q, dtype=float), lp, np.asarray(g, dtype=float))

    def hamiltonian(self, z: _Leapfrog) -> float:
        return -z.lp / self.temperature + 0.5 * float(z.p @ (self.inv_metric * z.p))

    def leapfrog(self, z: _Leapfrog, eps: float) -> None:
        T = self.temperature
        z.p = z.p + 0.5 * eps * z.g / T
        z.q = z.q + eps * self.inv_metric * z.p
        lp, g = self.f(z.q)
        lp = float(lp)
        z.lp = lp if math.isfinite(lp) else LOG_SENTINEL
        z.g = np.asarray(g, dtype=float)
        if not np.all(np.isfinite(z.g)):
            z.g = np.zeros_like(z.g)
            z.lp = LOG_SENTINEL
        z.p = z.p + 0.5 * eps * z.g / T

    def sample_momentum(self, rng) -> np.ndarray:
        return rng.standard_normal(self.dim) / np.sqrt(self.inv_metric)

    def init_step_size(self, x: _Point, rng) -> None:
        """Double or halve the step until the one-step acceptance crosses 0.8."""
        z = _Leapfrog(x.q.copy(), self.sample_momentum(rng), x.lp, x.g.copy())
        H0 = self.hamiltonian(z)
        self.leapfrog(z, self.step_size)
        delta = H0 - self.hamiltonian(z)
        direction = 1 if delta > math.log(0.8) else -1
        for _ in range(100):
            z = _Leapfrog(x.q.copy(), self.sample_momentum(rng), x.lp, x.g.copy())
            H0 = self.hamiltonian(z)
            self.leapfrog(z, self.step_size)
            delta = H0 - self.hamiltonian(z)
            if not math.isfinite(delta):
                delta = -math.inf
            if direction == 1 and not delta > math.log(0.8):
                break
            if direction == -1 and not delta < math.log(0.8):
                break
            self.step_size = self.step_size * 2.0 if direction == 1 else self.step_size * 0.5
            if self.step_size > 1e7 or self.step_size < 1e-12:
                break

    def transition(self, x: _Point, rng) -> tuple[_Point, dict]:
        p0 = self.sample_momentum(rng)
        z0 = _Leapfrog(x.q.copy(), p0, x.lp, x.g.copy())
        H0 = self.hamiltonian(z0)
        tree = _Tree(self, H0, rng)
        fwd = _Leapfrog(x.q.copy(), p0.copy(), x.lp, x.g.copy())
        bck = _Leapfrog(x.q.copy(), p0.copy(), x.lp, x.g.copy())
        ps0 = self.inv_metric * p0
        p_ff = p_fb = p_bf = p_bb = p0
        ps_ff = ps_fb = ps_bf = ps_bb = ps0
        rho = p0.copy()
        lsw = 0.0
        sample = x
        depth = 0
        while depth < self.max_depth:
            if rng.uniform() > 0.5:
                rho_bck = rho
                p_bf, ps_bf = p_fb, ps_fb
                ok, prop, ps_fb, ps_ff, rho_fwd, p_fb, p_ff, lsw_sub = tree.build(fwd, depth, 1)
            else:
                rho_fwd = rho
                p_fb, ps_fb = p_bf, ps_bf
                ok, prop, ps_bf, ps_bb, rho_bck, p_bf, p_bb, lsw_sub = tree.build(bck, depth, -1)
            if not ok:
                break
            depth += 1
            # biased progressive sampling favours the new subtree
            if lsw_sub > lsw or rng.uniform() < math.exp(lsw_sub - lsw):
                sample = prop
            lsw = _logaddexp(lsw, lsw_sub)
            rho = rho_bck + rho_fwd
            persist = _no_uturn(ps_bb, ps_ff, rho)
            persist = persist and _no_uturn(ps_bb, ps_fb, rho_bck + p_fb)
            persist = persist and _no_uturn(ps_bf, ps_ff, rho_fwd + p_bf)
            if not persist:
                break
        n = max(tree.n_leapfrog, 1)
        info = {
            "accept_stat": tree.sum_metro_prob / n,
            "n_leapfrog": tree.n_leapfrog,
            "depth": depth,
            "divergent": tree.divergent,
            "step_size": self.step_size,
        }
        return sample, info


class _Adapter:
    """Stan-style warmup: fast step-size phases around doubling slow metric windows."""

    def __init__(self, kernel: NutsKernel, n_warmup: int, adapt_metric: bool = True):
        self.k = kernel
        self.n_warmup = n_warmup
        self.adapt_metric = adapt_metric
        self.init, self.term, base = _warmup_windows(n_warmup)
        self.window_size = base
        self.window_end = self.init + base
        self.buffer: list[np.ndarray] = []
        self.da = _DualAveraging(math.log(10 * kernel.step_size), kernel.target_accept)
        self.i = 0

    def restart(self):
        self.da = _DualAveraging(math.log(10 * self.k.step_size), self.k.target_accept)

    def step(self, x: _Point, info: dict, rng) -> None:
        i = self.i
        self.k.step_size = self.da.update(info["accept_stat"])
        in_slow = self.adapt_metric and self.window_size > 0 and self.init <= i < self.n_warmup - self.term
        if in_slow:
            self.buffer.append(x.q.copy())
            if i + 1 == self.window_end:
                arr = np.array(self.buffer)
                n = arr.shape[0]
                var = arr.var(axis=0, ddof=1) if n > 1 else np.ones(self.k.dim)
                self.k.inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                self.buffer = []
                self.window_size *= 2
                next_end = i + 1 + self.window_size
                # stretch the last slow window to the final fast buffer
                if next_end + 2 * self.window_size > self.n_warmup - self.term:
                    next_end = self.n_warmup - self.term
                self.window_end = next_end
                self.k.init_step_size(x, rng)
                self.restart()
        self.i += 1
        if self.i == self.n_warmup:
            self.k.step_size = math.exp(self.da.x_bar)


@dataclass
class ChainResult:
    samples: np.ndarray  # (n_samples, dim), raw scale
    log_posts: np.ndarray  # untempered log posterior of each sample
    chain_id: int = 0
    temperature: float = 1.0
    acceptance_stats: dict = field(default_factory=dict)
    divergence_count: int = 0

    def to_csv(self, path, columns: list[str] | None = None) -> None:
        write_samples_csv(path, self, columns)


@dataclass
class PtLadder:
    temperatures: tuple[float, ...] = ()
    swap_schedule: str = "every_sweep"
    swap_accept_counts: np.ndarray | None = None  # (n_rungs - 1, 2): accepted, proposed

    def __post_init__(self):
        t = tuple(float(v) for v in (self.temperatures or geometric_ladder()))
        if t[0] != 1.0 or any(b <= a for a, b in zip(t, t[1:])):
            raise ContractError("temperatures must start at 1.0 and increase strictly")
        self.temperatures = t
        if self.swap_accept_counts is None:
            self.swap_accept_counts = np.zeros((max(len(t) - 1, 0), 2), dtype=int)

    @property
    def swap_rates(self) -> np.ndarray:
        acc, prop = self.swap_accept_counts[:, 0], self.swap_accept_counts[:, 1]
        return np.where(prop > 0, acc / np.maximum(prop, 1), np.nan)


def geometric_ladder(n: int = 8, t_max: float = 30.0) -> tuple[float, ...]:
    if n == 1:
        return (1.0,)
    return tuple(float(v) for v in np.geomspace(1.0, t_max, n))


def _summarise(infos: list[dict], kernel: NutsKernel) -> dict:
    if not infos:
        return {"mean_accept_stat": float("nan"), "step_size": kernel.step_size, "mean_depth": 0.0, "n_leapfrog": 0}
    return {
        "mean_accept_stat": float(np.mean([i["accept_stat"] for i in infos])),
        "step_size": kernel.step_size,
        "mean_depth": float(np.mean([i["depth"] for i in infos])),
        "n_leapfrog": int(sum(i["n_leapfrog"] for i in infos)),
        "inv_metric": kernel.inv_metric.tolist(),
    }


def nuts_sample(
    log_post: Callable,
    grad: Callable | None,
    theta0,
    n_samples: int,
    n_warmup: int = 1000,
    seed: int = 0,
    max_depth: int = 10,
    target_accept: float = 0.8,
    temperature: float = 1.0,
    chain_id: int = 0,
) -> ChainResult:
    """Draw ``n_samples`` after ``n_warmup`` adaptation transitions.

    ``grad=None`` means ``log_post`` returns ``(value, gradient)``.
    """
    f = _as_value_and_grad(log_post, grad)
    theta0 = np.asarray(theta0, dtype=float)
    rng = np.random.default_rng(seed)
    kernel = NutsKernel(f, theta0.size, temperature, max_depth, target_accept)
    x = kernel.evaluate(theta0)
    if is_log_sentinel(x.lp):
        raise InitializationError("log posterior at the initial point is the failure sentinel")
    if n_samples == 0 and n_warmup == 0:
        return ChainResult(np.empty((0, theta0.size)), np.empty(0), chain_id, temperature, _summarise([], kernel), 0)
    kernel.init_step_size(x, rng)
    adapter = _Adapter(kernel, n_warmup)
    for _ in range(n_warmup):
        x, info = kernel.transition(x, rng)
        adapter.step(x, info, rng)
    samples = np.empty((n_samples, theta0.size))
    lps = np.empty(n_samples)
    infos = []
    for i in range(n_samples):
        x, info = kernel.transition(x, rng)
        samples[i] = x.q
        lps[i] = x.lp
        infos.append(info)
    div = sum(1 for i in infos if i["divergent"])
    return ChainResult(samples, lps, chain_id, temperature, _summarise(infos, kernel), div)


def parallel_tempering(
    log_post: Callable,
    grad: Callable | None,
    theta0,
    ladder: PtLadder | None,
    n_samples: int,
    seed: int = 0,
    n_warmup: int = 1000,
    max_depth: int = 10,
    target_accept: float = 0.8,
) -> tuple[ChainResult, PtLadder]:
    """NUTS on every rung of ``ladder`` with deterministic even/odd swaps after each sweep.

    Returns the unit-temperature chain and the ladder with swap statistics.
    """
    ladder = ladder or PtLadder()
    f = _as_value_and_grad(log_post, grad)
    theta0 = np.asarray(theta0, dtype=float)
    rng = np.random.default_rng(seed)
    temps = ladder.temperatures
    kernels = [NutsKernel(f, theta0.size, T, max_depth, target_accept) for T in temps]
    x0 = kernels[0].evaluate(theta0)
    if is_log_sentinel(x0.lp):
        raise InitializationError("log posterior at the initial point is the failure sentinel")
    states = [_Point(x0.q.copy(), x0.lp, x0.g.copy()) for _ in temps]
    for k, x in zip(kernels, states):
        k.init_step_size(x, rng)
    adapters = [_Adapter(k, n_warmup) for k in kernels]
    counts = np.zeros((len(temps) - 1, 2), dtype=int)
    samples = np.empty((n_samples, theta0.size))
    lps = np.empty(n_samples)
    infos = []
    for sweep in range(n_warmup + n_samples):
        warm = sweep < n_warmup
        for r, k in enumerate(kernels):
            states[r], info = k.transition(states[r], rng)
            if warm:
                adapters[r].step(states[r], info, rng)
            elif r == 0:
                infos.append(info)
        for j in range(sweep % 2, len(temps) - 1, 2):
            a, b = states[j], states[j + 1]
            log_ratio = (1.0 / temps[j] - 1.0 / temps[j + 1]) * (b.lp - a.lp)
            counts[j, 1] += 1
            if log_ratio >= 0 or rng.uniform() < math.exp(log_ratio):
                states[j], states[j + 1] = b, a
                counts[j, 0] += 1
        if not warm:
            i = sweep - n_warmup
            samples[i] = states[0].q
            lps[i] = states[0].lp
    ladder.swap_accept_counts = counts
    stats_ = _summarise(infos, kernels[0])
    stats_["swap_rates"] = ladder.swap_rates.tolist()
    stats_["rung_step_sizes"] = [k.step_size for k in kernels]
    div = sum(1 for i in infos if i["divergent"])
    return ChainResult(samples, lps, 0, 1.0, stats_, div), ladder


def warm_start(
    problem: UdeProblem, space: ParamSpace, data: Dataset, cfg: FitConfig, net_init: str = "glorot_uniform"
) -> np.ndarray:
    """Best-validation parameters of a short fit, used as a sampler start."""
    theta0 = sample_start_point(space, cfg.seed, net_init, problem.mlp)
    if cfg.adam_epochs == 0 and cfg.qn_max_iters == 0:
        return theta0
    res = fit_single(problem, space, data, cfg, theta0)
    if res.message == "no finite evaluation":
        raise InitializationError("warm-start fit produced no finite objective value")
    return res.theta_best_raw


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


def _split(x: np.ndarray) -> np.ndarray:
    """(m, n) -> (2m, n // 2), dropping the middle draw of odd-length chains."""
    m, n = x.shape
    h = n // 2
    return np.concatenate([x[:, :h], x[:, n - h :]], axis=0)


def _z_scale(x: np.ndarray) -> np.ndarray:
    r = stats.rankdata(x, method="average").reshape(x.shape)
    return special.ndtri((r - 0.375) / (x.size + 0.25))


def _rhat(x: np.ndarray) -> float:
    m, n = x.shape
    b = n * np.var(x.mean(axis=1), ddof=1)
    w = np.mean(np.var(x, axis=1, ddof=1))
    return float(np.sqrt((b / w + n - 1) / n))


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[1]
    xc = x - x.mean(axis=1, keepdims=True)
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    fx = np.fft.rfft(xc, size, axis=1)
    return np.fft.irfft(fx * np.conj(fx), size, axis=1)[:, :n] / n


def _ess(x: np.ndarray) -> float:
    """Effective sample size with Geyer's initial monotone sequence over chains."""
    m, n = x.shape
    acov = _autocov(x)
    mean_var = np.mean(acov[:, 0]) * n / (n - 1.0)
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += np.var(x.mean(axis=1), ddof=1)
    rho = np.zeros(n)
    rho[0] = rho_even = 1.0
    rho[1] = rho_odd = 1.0 - (mean_var - np.mean(acov[:, 1])) / var_plus
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - np.mean(acov[:, t + 1])) / var_plus
        rho_odd = 1.0 - (mean_var - np.mean(acov[:, t + 2])) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = rho[t + 2] = 0.5 * (rho[t - 1] + rho[t])
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * np.sum(rho[: max_t + 1]) + np.sum(rho[max_t + 1 : max_t + 2])
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def chain_diagnostics(chains: list[ChainResult]) -> dict:
    """Rank-normalized split-R-hat (max of bulk and folded) and bulk ESS per dimension.

    Dimensions that are constant across all draws report R-hat as NaN and ESS 0.
    """
    if not chains:
        raise ContractError("at least one chain is required")
    lengths = {c.samples.shape[0] for c in chains}
    if len(lengths) != 1:
        raise ContractError("chains must have equal length")
    n = lengths.pop()
    dim = chains[0].samples.shape[1]
    if n < 4:
        raise ContractError("chains need at least 4 draws")
    rhat = np.full(dim, np.nan)
    ess = np.zeros(dim)
    for d in range(dim):
        x = np.array([c.samples[:, d] for c in chains])
        if np.ptp(x) < np.finfo(float).resolution:
            continue
        s = _split(x)
        z = _z_scale(s)
        folded = _z_scale(np.abs(s - np.median(s)))
        rhat[d] = max(_rhat(z), _rhat(folded))
        ess[d] = _ess(z)
    return {
        "rhat": rhat.tolist(),
        "ess_bulk": ess.tolist(),
        "divergences": [int(c.divergence_count) for c in chains],
        "n_chains": len(chains),
        "n_draws": n,
    }


def write_samples_csv(path, chain: ChainResult, columns: list[str] | None = None) -> None:
    dim = chain.samples.shape[1]
    cols = columns or [f"theta.{i}" for i in range(dim)]
    if len(cols) != dim:
        raise ContractError("one column name per dimension is required")
    lines = [",".join(["draw", "logpost", *cols])]
    for i, (row, lp) in enumerate(zip(chain.samples, chain.log_posts)):
        lines.append(",".join([str(i), repr(float(lp)), *(repr(float(v)) for v in row)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_samples_csv(path) -> ChainResult:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ChainResult(arr[:, 2:], arr[:, 1])


def write_diagnostics(path, diag: dict) -> None:
    clean = json.loads(json.dumps(diag, default=float).replace("NaN", "null"))
    Path(path).write_text(json.dumps(clean, indent=2, sort_keys=True) + "\n")
