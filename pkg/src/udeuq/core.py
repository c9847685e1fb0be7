"""Parameter spaces, transforms, the embedded MLP and the UDE right-hand sides.

Everything here is plain numpy and immutable; the fast integration kernels in
:mod:`udeuq.solve` dispatch on :class:`UdeProblem` to reuse these definitions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from udeuq.errors import ConfigError, ContractError, DegenerateStateError, DomainError, SimulationError

# Finite stand-ins for -inf log densities and +inf negative log-likelihoods.
LOG_SENTINEL = -1e10
NEGLL_PENALTY = 1e10


def is_penalty(value: float) -> bool:
    """True for the failure sentinel; large finite negLLs are genuine values."""
    return not math.isfinite(value) or value == NEGLL_PENALTY


def is_log_sentinel(value: float) -> bool:
    """True for the log-density failure sentinel; very negative finite values are genuine."""
    return not math.isfinite(value) or value == LOG_SENTINEL


# ---------------------------------------------------------------------------
# Transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Transform:
    """Elementwise map from the unconstrained (raw) scale to the natural scale.

    ``kind`` is one of ``"identity"``, ``"log"`` (natural = exp(raw)) and
    ``"tanh_box"`` (natural = a * tanh(raw - c) + b, image (b - a, b + a)).
    """

    kind: str = "identity"
    a: float = 1.0
    b: float = 0.0
    c: float = 0.0

    def __post_init__(self):
        if self.kind not in ("identity", "log", "tanh_box"):
            raise ConfigError(f"unknown transform kind {self.kind!r}")
        if self.kind == "tanh_box" and not self.a > 0:
            raise ConfigError("tanh_box half-width must be positive")

    @classmethod
    def tanh_box(cls, a: float, b: float, c: float = 0.0) -> "Transform":
        return cls("tanh_box", float(a), float(b), float(c))

    @classmethod
    def bounded(cls, lo: float, hi: float) -> "Transform":
        return cls.tanh_box(0.5 * (hi - lo), 0.5 * (hi + lo))

    @property
    def bounds(self) -> tuple[float, float]:
        if self.kind == "tanh_box":
            return (self.b - self.a, self.b + self.a)
        if self.kind == "log":
            return (0.0, math.inf)
        return (-math.inf, math.inf)

    def to_natural(self, raw):
        raw = np.asarray(raw, dtype=float)
        if self.kind == "identity":
            return raw.copy()
        if self.kind == "log":
            return np.exp(raw)
        return self.a * np.tanh(raw - self.c) + self.b

    def to_raw(self, natural):
        nat = np.asarray(natural, dtype=float)
        lo, hi = self.bounds
        if self.kind != "identity" and np.any(~((nat > lo) & (nat < hi))):
            raise DomainError(f"value outside the open interval ({lo}, {hi}) of a {self.kind} transform")
        if self.kind == "identity":
            return nat.copy()
        if self.kind == "log":
            return np.log(nat)
        return np.arctanh((nat - self.b) / self.a) + self.c

    def derivative(self, raw):
        """d natural / d raw."""
        raw = np.asarray(raw, dtype=float)
        if self.kind == "identity":
            return np.ones_like(raw)
        if self.kind == "log":
            return np.exp(raw)
        t = np.tanh(raw - self.c)
        return self.a * (1.0 - t * t)

    def log_abs_det(self, raw):
        raw = np.asarray(raw, dtype=float)
        if self.kind == "identity":
            return np.zeros_like(raw)
        if self.kind == "log":
            return raw.copy()
        # log(a (1 - tanh^2 u)) = log(4a) - 2 log(2 cosh u), written stably
        u = np.abs(raw - self.c)
        return math.log(4.0 * self.a) - 2.0 * (u + np.log1p(np.exp(-2.0 * u)))

    def grad_log_abs_det(self, raw):
        raw = np.asarray(raw, dtype=float)
        if self.kind == "identity":
            return np.zeros_like(raw)
        if self.kind == "log":
            return np.ones_like(raw)
        return -2.0 * np.tanh(raw - self.c)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b, "c": self.c}

    @classmethod
    def from_dict(cls, d: dict) -> "Transform":
        return cls(d["kind"], float(d.get("a", 1.0)), float(d.get("b", 0.0)), float(d.get("c", 0.0)))


# ---------------------------------------------------------------------------
# Priors
# ---------------------------------------------------------------------------

_PRIOR_ARITY = {"normal": 2, "uniform": 2, "loguniform": 2, "beta": 2, "isotropic_normal": 1}


@dataclass(frozen=True)
class PriorSpec:
    """Univariate prior applied independently to every entry of a segment.

    ``applies_on`` selects whether the density is defined on the raw or the
    natural value; natural-scale densities are converted to raw-scale
    densities by :func:`udeuq.likelihood.log_prior`.
    """

    kind: str
    params: tuple
    applies_on: str = "raw"

    def __post_init__(self):
        if self.kind not in _PRIOR_ARITY:
            raise ConfigError(f"unknown prior kind {self.kind!r}")
        if len(self.params) != _PRIOR_ARITY[self.kind]:
            raise ConfigError(f"{self.kind} prior takes {_PRIOR_ARITY[self.kind]} parameters")
        if self.applies_on not in ("raw", "natural"):
            raise ConfigError("applies_on must be 'raw' or 'natural'")
        p = self.params
        if self.kind in ("normal",) and not p[1] > 0:
            raise ConfigError("normal prior needs sigma > 0")
        if self.kind == "isotropic_normal" and not p[0] > 0:
            raise ConfigError("isotropic normal prior needs sigma > 0")
        if self.kind in ("uniform", "loguniform") and not p[0] < p[1]:
            raise ConfigError("uniform priors need lo < hi")
        if self.kind == "loguniform" and not p[0] > 0:
            raise ConfigError("loguniform prior needs lo > 0")
        if self.kind == "beta" and not (p[0] > 0 and p[1] > 0):
            raise ConfigError("beta prior needs positive shapes")

    @property
    def support(self) -> tuple[float, float]:
        if self.kind in ("uniform", "loguniform"):
            return (float(self.params[0]), float(self.params[1]))
        if self.kind == "beta":
            return (0.0, 1.0)
        return (-math.inf, math.inf)

    def in_support(self, values) -> bool:
        v = np.asarray(values, dtype=float)
        lo, hi = self.support
        if self.kind == "beta":
            return bool(np.all((v > lo) & (v < hi)))
        return bool(np.all((v >= lo) & (v <= hi)))

    def logpdf(self, values) -> float:
        """Summed log density; ``LOG_SENTINEL`` outside the support."""
        v = np.asarray(values, dtype=float)
        if not np.all(np.isfinite(v)) or not self.in_support(v):
            return LOG_SENTINEL
        p = self.params
        if self.kind == "normal":
            mu, s = p
            return float(np.sum(-0.5 * math.log(2 * math.pi) - math.log(s) - 0.5 * ((v - mu) / s) ** 2))
        if self.kind == "isotropic_normal":
            s = p[0]
            return float(np.sum(-0.5 * math.log(2 * math.pi) - math.log(s) - 0.5 * (v / s) ** 2))
        if self.kind == "uniform":
            return -v.size * math.log(p[1] - p[0])
        if self.kind == "loguniform":
            return float(np.sum(-np.log(v) - math.log(math.log(p[1] / p[0]))))
        a, b = p
        return float(np.sum((a - 1) * np.log(v) + (b - 1) * np.log1p(-v) - special.betaln(a, b)))

    def grad_logpdf(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=float)
        if not self.in_support(v):
            return np.zeros_like(v)
        p = self.params
        if self.kind == "normal":
            return -(v - p[0]) / p[1] ** 2
        if self.kind == "isotropic_normal":
            return -v / p[0] ** 2
        if self.kind == "uniform":
            return np.zeros_like(v)
        if self.kind == "loguniform":
            return -1.0 / v
        a, b = p
        return (a - 1) / v - (b - 1) / (1 - v)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        p = self.params
        if self.kind == "normal":
            return rng.normal(p[0], p[1], size)
        if self.kind == "isotropic_normal":
            return rng.normal(0.0, p[0], size)
        if self.kind == "uniform":
            return rng.uniform(p[0], p[1], size)
        if self.kind == "loguniform":
            return np.exp(rng.uniform(math.log(p[0]), math.log(p[1]), size))
        return rng.beta(p[0], p[1], size)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params), "applies_on": self.applies_on}

    @classmethod
    def from_dict(cls, d: dict) -> "PriorSpec":
        return cls(d["kind"], tuple(float(x) for x in d["params"]), d.get("applies_on", "raw"))


# ---------------------------------------------------------------------------
# Parameter space
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    name: str
    length: int
    transform: Transform
    prior: PriorSpec
    role: str = "mech"  # mech | net | noise
    start: PriorSpec | None = None  # distribution for multistart draws; defaults to the prior

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "length": self.length,
            "role": self.role,
            "transform": self.transform.to_dict(),
            "prior": self.prior.to_dict(),
        }
        if self.start is not None:
            d["start"] = self.start.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Segment":
        start = PriorSpec.from_dict(d["start"]) if d.get("start") else None
        return cls(
            d["name"],
            int(d["length"]),
            Transform.from_dict(d["transform"]),
            PriorSpec.from_dict(d["prior"]),
            d.get("role", "mech"),
            start,
        )


@dataclass(frozen=True)
class ParamSpace:
    """Flat raw parameter vector split into named, transformed segments."""

    segments: tuple

    def __post_init__(self):
        names = [s.name for s in self.segments]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate segment names in {names}")
        for s in self.segments:
            if s.length < 1:
                raise ConfigError(f"segment {s.name!r} has non-positive length")

    @property
    def total_dim(self) -> int:
        return sum(s.length for s in self.segments)

    def slices(self) -> dict[str, slice]:
        out, i = {}, 0
        for s in self.segments:
            out[s.name] = slice(i, i + s.length)
            i += s.length
        return out

    def segment(self, name: str) -> Segment:
        for s in self.segments:
            if s.name == name:
                return s
        raise KeyError(name)

    def by_role(self, role: str) -> list[Segment]:
        return [s for s in self.segments if s.role == role]

    def get(self, theta, name: str) -> np.ndarray:
        return np.asarray(theta, dtype=float)[self.slices()[name]]

    def column_names(self) -> list[str]:
        cols = []
        for s in self.segments:
            if s.length == 1:
                cols.append(s.name)
            else:
                cols.extend(f"{s.name}.{i}" for i in range(s.length))
        return cols

    def _check(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.total_dim,):
            raise ContractError(f"expected a vector of length {self.total_dim}, got shape {v.shape}")
        return v

    def to_dict(self) -> dict:
        return {"segments": [s.to_dict() for s in self.segments]}

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSpace":
        return cls(tuple(Segment.from_dict(s) for s in d["segments"]))


def to_natural(space: ParamSpace, raw) -> np.ndarray:
    raw = space._check(raw)
    out = np.empty_like(raw)
    for seg, sl in zip(space.segments, space.slices().values()):
        out[sl] = seg.transform.to_natural(raw[sl])
    return out


def to_raw(space: ParamSpace, natural) -> np.ndarray:
    nat = space._check(natural)
    out = np.empty_like(nat)
    for seg, sl in zip(space.segments, space.slices().values()):
        out[sl] = seg.transform.to_raw(nat[sl])
    return out


# ---------------------------------------------------------------------------
# Multilayer perceptron
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    """Fully connected tanh network with an identity output layer.

    Parameters are stored layer by layer as ``W`` (row-major, shape
    ``(n_out, n_in)``) followed by the bias ``b``.
    """

    layer_sizes: tuple = (1, 6, 6, 1)
    input_scale: float = 1.0

    def __post_init__(self):
        if len(self.layer_sizes) < 2 or any(int(n) < 1 for n in self.layer_sizes):
            raise ConfigError(f"invalid layer sizes {self.layer_sizes}")
        if not self.input_scale > 0:
            raise ConfigError("input_scale must be positive")

    @property
    def n_params(self) -> int:
        n = self.layer_sizes
        return sum(n[i] * n[i + 1] + n[i + 1] for i in range(len(n) - 1))

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "input_scale": self.input_scale}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(int(n) for n in d["layer_sizes"]), float(d.get("input_scale", 1.0)))


def mlp_unpack(spec: MlpSpec, theta_net) -> list[tuple[np.ndarray, np.ndarray]]:
    theta_net = np.asarray(theta_net, dtype=float)
    if theta_net.shape != (spec.n_params,):
        raise ContractError(f"network needs {spec.n_params} parameters, got shape {theta_net.shape}")
    layers, i = [], 0
    n = spec.layer_sizes
    for k in range(len(n) - 1):
        W = theta_net[i : i + n[k] * n[k + 1]].reshape(n[k + 1], n[k])
        i += n[k] * n[k + 1]
        b = theta_net[i : i + n[k + 1]]
        i += n[k + 1]
        layers.append((W, b))
    return layers


def mlp_init(spec: MlpSpec, seed: int, scheme: str = "glorot_uniform") -> np.ndarray:
    if scheme == "zeros":
        return np.zeros(spec.n_params)
    if scheme != "glorot_uniform":
        raise ConfigError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    parts = []
    n = spec.layer_sizes
    for k in range(len(n) - 1):
        limit = math.sqrt(6.0 / (n[k] + n[k + 1]))
        parts.append(rng.uniform(-limit, limit, n[k] * n[k + 1]))
        parts.append(np.zeros(n[k + 1]))
    return np.concatenate(parts)


def mlp_forward(spec: MlpSpec, theta_net, x):
    """Evaluate the network.

    A scalar input returns a scalar when the output layer has width one.
    An input array of shape ``(n,)`` for a one-input network is treated as a
    batch of ``n`` scalar inputs.
    """
    layers = mlp_unpack(spec, theta_net)
    x_arr = np.asarray(x, dtype=float)
    scalar = x_arr.ndim == 0
    n_in = spec.layer_sizes[0]
    if scalar:
        h = x_arr.reshape(1, 1)
    elif n_in == 1 and x_arr.ndim == 1:
        h = x_arr.reshape(-1, 1)
    else:
        h = np.atleast_2d(x_arr)
    h = h / spec.input_scale
    for k, (W, b) in enumerate(layers):
        h = h @ W.T + b
        if k < len(layers) - 1:
            h = np.tanh(h)
    if scalar:
        return float(h[0, 0]) if spec.layer_sizes[-1] == 1 else h[0]
    return h[:, 0] if spec.layer_sizes[-1] == 1 else h


def mlp_param_grad(spec: MlpSpec, theta_net, x: float) -> np.ndarray:
    """Gradient of a scalar network output with respect to its parameters (backprop)."""
    layers = mlp_unpack(spec, theta_net)
    acts = [np.atleast_1d(np.asarray(x, dtype=float)) / spec.input_scale]
    for k, (W, b) in enumerate(layers):
        z = W @ acts[-1] + b
        acts.append(np.tanh(z) if k < len(layers) - 1 else z)
    grads = []
    delta = np.ones(1)
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        grads.append((np.outer(delta, acts[k]).ravel(), delta.copy()))
        if k > 0:
            delta = (W.T @ delta) * (1.0 - acts[k] ** 2)
    return np.concatenate([np.concatenate(g) for g in reversed(grads)])


# ---------------------------------------------------------------------------
# Mechanistic pieces
# ---------------------------------------------------------------------------


def beta_pulse(t):
    t = np.asarray(t, dtype=float)
    out = np.where((t > 15.0) & (t < 30.0), 0.5, 0.05)
    return float(out) if out.ndim == 0 else out


def beta_waves(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("beta_waves is defined for t >= 0")
    out = np.cos((-1.0 + np.sqrt(1.0 + 4.0 * t)) * 1.5 + 0.25 * np.pi) * 0.3 + 0.4
    return float(out) if out.ndim == 0 else out


def rhs_seir(t, x, beta, alpha, gamma) -> np.ndarray:
    S, E, I, R = np.asarray(x, dtype=float)
    N = S + E + I + R
    if not N > 0:
        raise DegenerateStateError(f"population size must be positive, got {N}")
    inf = beta * S * I / N
    return np.array([-inf, inf - alpha * E, alpha * E - gamma * I, gamma * I])


def rhs_quadratic(x, alpha, beta) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return alpha * x - beta * x * x


# ---------------------------------------------------------------------------
# Problems
# ---------------------------------------------------------------------------

SCENARIOS = ("seir_pulse", "seir_waves", "quadratic")

# Ground-truth mechanistic values per scenario.
TRUE_MECH = {
    "seir_waves": {"alpha": 0.9, "gamma": 0.1},
    "seir_pulse": {"alpha": 0.33, "gamma": 0.05},
    "quadratic": {"alpha": 1.0, "beta": 2.0},
}

# (noise kind, parameter values) combinations of the synthetic catalog.
CATALOG = {
    "quadratic": {"gaussian": (0.01, 0.05)},
    "seir_waves": {"gaussian": (0.01, 0.05), "negbin": (1.2, 2.2)},
    "seir_pulse": {"gaussian": (0.01, 0.03), "negbin": (1.2, 2.2)},
}


@dataclass(frozen=True)
class UdeProblem:
    name: str
    n_x: int
    state_names: tuple
    x0: tuple
    t_span: tuple
    observed: tuple
    net_role: str
    mlp: MlpSpec
    mech_bounds: tuple  # ((name, Transform), ...)
    noise_kind: str = "gaussian"
    n_obs: int = 30
    beta_bounded: bool = False

    @property
    def n_y(self) -> int:
        return len(self.observed)

    @property
    def is_seir(self) -> bool:
        return self.net_role == "time_varying_input"

    def observe(self, states) -> np.ndarray:
        return np.asarray(states)[..., list(self.observed)]

    def obs_times(self) -> np.ndarray:
        t0, t1 = self.t_span
        return np.linspace(t0, t1, self.n_obs + 1)[1:]

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "noise_kind": self.noise_kind,
            "beta_bounded": self.beta_bounded,
            "mlp": self.mlp.to_dict(),
        }


def make_problem(
    scenario: str,
    noise_kind: str = "gaussian",
    *,
    beta_bounded: bool = False,
    layer_sizes: Sequence[int] = (1, 6, 6, 1),
) -> UdeProblem:
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if noise_kind not in ("gaussian", "negbin"):
        raise ConfigError(f"unknown noise kind {noise_kind!r}")
    if scenario == "quadratic":
        if noise_kind != "gaussian":
            raise ConfigError("quadratic scenario only supports gaussian noise")
        return UdeProblem(
            name="quadratic",
            n_x=1,
            state_names=("x",),
            x0=(0.1,),
            t_span=(0.0, 10.0),
            observed=(0,),
            net_role="additive_term",
            mlp=MlpSpec(tuple(layer_sizes), 1.0),
            mech_bounds=(("alpha", Transform("log")),),
            noise_kind="gaussian",
            n_obs=12,
        )
    x0 = (0.995, 0.004, 0.001, 0.0) if noise_kind == "gaussian" else (995.0, 4.0, 1.0, 0.0)
    return UdeProblem(
        name=scenario,
        n_x=4,
        state_names=("S", "E", "I", "R"),
        x0=x0,
        t_span=(0.0, 130.0),
        observed=(2, 3),
        net_role="time_varying_input",
        mlp=MlpSpec(tuple(layer_sizes), 130.0),
        mech_bounds=(("alpha", Transform.bounded(0.0, 24.0)), ("gamma", Transform.bounded(0.0, 1.0))),
        noise_kind=noise_kind,
        n_obs=30,
        beta_bounded=beta_bounded,
    )


def noise_segment(noise_kind: str, scenario: str = "seir") -> Segment:
    if noise_kind == "gaussian":
        # log sigma with a flat raw prior; starts drawn log-uniformly
        start = (
            PriorSpec("loguniform", (0.1, 10.0), "natural")
            if scenario == "quadratic"
            else PriorSpec("loguniform", (1e-3, 1.0), "natural")
        )
        return Segment("sigma", 1, Transform("log"), PriorSpec("uniform", (-10.0, 10.0)), "noise", start)
    # inverse dispersion p = 1/d in (0, 1)
    return Segment(
        "inv_d", 1, Transform.bounded(0.0, 1.0), PriorSpec("beta", (2.0, 2.0), "natural"), "noise"
    )


def make_space(problem: UdeProblem) -> ParamSpace:
    """Default parameter space: mechanistic segments, network, noise parameter."""
    net = Segment(
        "net",
        problem.mlp.n_params,
        Transform(),
        PriorSpec("isotropic_normal", (math.sqrt(3.0),)),
        "net",
    )
    if problem.name == "quadratic":
        mech = [
            Segment(
                "alpha",
                1,
                Transform("log"),
                PriorSpec("loguniform", (0.1, 10.0), "natural"),
                "mech",
            )
        ]
    else:
        mech = [
            Segment(name, 1, tr, PriorSpec("normal", (0.0, 1.0)), "mech") for name, tr in problem.mech_bounds
        ]
    return ParamSpace(tuple(mech + [net, noise_segment(problem.noise_kind, problem.name)]))


def reference_rhs(problem: UdeProblem) -> tuple[Callable, tuple]:
    """Data-generating vector field ``f(t, x)`` and its breakpoints."""
    truth = TRUE_MECH[problem.name]
    if problem.name == "quadratic":
        return (lambda t, x: rhs_quadratic(x, truth["alpha"], truth["beta"])), ()
    beta_fn = beta_pulse if problem.name == "seir_pulse" else beta_waves
    tstops = (15.0, 30.0) if problem.name == "seir_pulse" else ()
    a, g = truth["alpha"], truth["gamma"]
    return (lambda t, x: rhs_seir(t, x, beta_fn(t), a, g)), tstops


def true_beta(problem: UdeProblem) -> Callable:
    if problem.name == "seir_pulse":
        return beta_pulse
    if problem.name == "seir_waves":
        return beta_waves
    raise ConfigError(f"{problem.name} has no transmission rate")


def beta_link(problem: UdeProblem, net_out):
    """Map network output to the transmission rate."""
    net_out = np.asarray(net_out, dtype=float)
    if problem.beta_bounded:
        return 1.5 * np.tanh(net_out) + 1.5
    return np.exp(net_out)


@dataclass(frozen=True)
class UdeVectorField:
    """Composed UDE right-hand side ``(t, x, theta_raw) -> dx``."""

    problem: UdeProblem
    space: ParamSpace
    _slices: dict = field(default=None, repr=False, compare=False, hash=False)

    def __post_init__(self):
        names = {s.name for s in self.space.segments}
        need = {n for n, _ in self.problem.mech_bounds} | {"net"}
        if not need <= names:
            raise ConfigError(f"parameter space lacks segments {sorted(need - names)}")
        if self.space.segment("net").length != self.problem.mlp.n_params:
            raise ConfigError("network segment length does not match the MLP spec")
        object.__setattr__(self, "_slices", self.space.slices())

    def mech(self, theta_raw) -> dict[str, float]:
        theta_raw = np.asarray(theta_raw, dtype=float)
        out = {}
        for name, _ in self.problem.mech_bounds:
            seg = self.space.segment(name)
            out[name] = float(seg.transform.to_natural(theta_raw[self._slices[name]])[0])
        return out

    def net_params(self, theta_raw) -> np.ndarray:
        return np.asarray(theta_raw, dtype=float)[self._slices["net"]]

    def beta(self, t, theta_raw):
        if not self.problem.is_seir:
            raise ConfigError("beta(t) only exists for time-varying-input problems")
        out = mlp_forward(self.problem.mlp, self.net_params(theta_raw), t)
        return beta_link(self.problem, out)

    def __call__(self, t, x, theta_raw) -> np.ndarray:
        theta_raw = np.asarray(theta_raw, dtype=float)
        mech = self.mech(theta_raw)
        net = mlp_forward(self.problem.mlp, self.net_params(theta_raw), x[0] if not self.problem.is_seir else t)
        if not np.all(np.isfinite(net)):
            raise SimulationError("non-finite network output")
        if self.problem.is_seir:
            return rhs_seir(t, x, float(beta_link(self.problem, net)), mech["alpha"], mech["gamma"])
        return mech["alpha"] * np.asarray(x, dtype=float) - net


def compose_ude_rhs(problem: UdeProblem, space: ParamSpace) -> UdeVectorField:
    return UdeVectorField(problem, space)
