"""Compiled RK4 steppers and their discrete adjoints for the two UDE families.

The adjoints differentiate the discretised scheme exactly: for an RK4 step
``x+ = x + h/6 (k1 + 2 k2 + 2 k3 + k4)`` the stage inputs are stored on the
forward pass and the vector-Jacobian products of every stage are replayed in
reverse.  Network layout matches :func:`udeuq.core.mlp_unpack`.
"""

import math

import numpy as np
from numba import njit as _njit

# No nnan/ninf.  reassoc still folds np.isfinite (x - x == 0) to true, so
# failure checks go through _finite, which is a plain comparison.
_FLAGS = {"nsz", "arcp", "contract", "reassoc"}
_DBL_MAX = 1.7976931348623157e308


def njit(fn):
    # numpy error model: x / 0 gives inf or nan, which the step loop reports as a failed solve
    return _njit(cache=True, fastmath=_FLAGS, error_model="numpy")(fn)


@njit
def _finite(v):
    return abs(v) <= _DBL_MAX


@njit
def _tanh(x):
    # faster than libm tanh; relative error below 1e-13 everywhere
    ax = abs(x)
    if ax < 1e-3:
        x2 = x * x
        return x * (1.0 - x2 / 3.0 + 2.0 * x2 * x2 / 15.0)
    e = math.exp(-2.0 * ax)
    r = (1.0 - e) / (1.0 + e)
    return r if x >= 0 else -r


@njit
def mlp_eval(theta, sizes, poff, aoff, u, acts):
    """Scalar-in, first-output network evaluation; stores activations in ``acts``."""
    acts[0] = u
    L = sizes.shape[0] - 1
    for l in range(L):
        nin = sizes[l]
        nout = sizes[l + 1]
        w0 = poff[l]
        b0 = w0 + nin * nout
        a_in = aoff[l]
        a_out = aoff[l + 1]
        for j in range(nout):
            s = theta[b0 + j]
            for i in range(nin):
                s += theta[w0 + j * nin + i] * acts[a_in + i]
            if l < L - 1:
                s = _tanh(s)
            acts[a_out + j] = s
    return acts[aoff[L]]


@njit
def mlp_backward(theta, sizes, poff, aoff, acts, gout, gtheta, d_a, d_b):
    """Accumulate ``gout * d out / d theta`` into ``gtheta``; return ``gout * d out / d u``."""
    L = sizes.shape[0] - 1
    d_a[0] = gout
    for j in range(1, sizes[L]):
        d_a[j] = 0.0
    for l in range(L - 1, -1, -1):
        nin = sizes[l]
        nout = sizes[l + 1]
        w0 = poff[l]
        b0 = w0 + nin * nout
        a_in = aoff[l]
        for j in range(nout):
            dj = d_a[j]
            gtheta[b0 + j] += dj
            for i in range(nin):
                gtheta[w0 + j * nin + i] += dj * acts[a_in + i]
        for i in range(nin):
            s = 0.0
            for j in range(nout):
                s += theta[w0 + j * nin + i] * d_a[j]
            if l > 0:
                ai = acts[a_in + i]
                s *= 1.0 - ai * ai
            d_b[i] = s
        for i in range(nin):
            d_a[i] = d_b[i]
    return d_a[0]


# ---------------------------------------------------------------------------
# SEIR with a network-driven transmission rate
# ---------------------------------------------------------------------------


@njit
def seir_betas(theta_net, sizes, poff, aoff, scale, ts, bounded, acts_store, outs, betas):
    """Transmission rate at grid nodes (even slots) and step midpoints (odd slots).

    Slot ``2s`` holds t_s, ``2s + 1`` holds t_s + h/2; arrays have length 2n + 1.
    """
    n = ts.shape[0] - 1
    ok = True
    for m in range(2 * n + 1):
        s = m // 2
        if m % 2 == 0:
            tk = ts[s]
        else:
            tk = 0.5 * (ts[s] + ts[s + 1])
        o = mlp_eval(theta_net, sizes, poff, aoff, tk / scale, acts_store[m])
        outs[m] = o
        if bounded:
            b = 1.5 * _tanh(o) + 1.5
        else:
            b = math.exp(o)
        if not _finite(b):
            ok = False
        betas[m] = b
    return ok


@njit
def _seir_f(y, beta, alpha, gamma, out):
    N = y[0] + y[1] + y[2] + y[3]
    F = beta * y[0] * y[2] / N
    out[0] = -F
    out[1] = F - alpha * y[1]
    out[2] = alpha * y[1] - gamma * y[2]
    out[3] = gamma * y[2]
    return N


@njit
def seir_forward(x0, ts, betas, alpha, gamma, states, stages):
    n = ts.shape[0] - 1
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    for i in range(4):
        states[0, i] = x0[i]
    for s in range(n):
        h = ts[s + 1] - ts[s]
        x = states[s]
        y1 = stages[s, 0]
        y2 = stages[s, 1]
        y3 = stages[s, 2]
        y4 = stages[s, 3]
        for i in range(4):
            y1[i] = x[i]
        if not _seir_f(y1, betas[2 * s], alpha, gamma, k1) > 0:
            return False
        for i in range(4):
            y2[i] = x[i] + 0.5 * h * k1[i]
        if not _seir_f(y2, betas[2 * s + 1], alpha, gamma, k2) > 0:
            return False
        for i in range(4):
            y3[i] = x[i] + 0.5 * h * k2[i]
        if not _seir_f(y3, betas[2 * s + 1], alpha, gamma, k3) > 0:
            return False
        for i in range(4):
            y4[i] = x[i] + h * k3[i]
        if not _seir_f(y4, betas[2 * s + 2], alpha, gamma, k4) > 0:
            return False
        for i in range(4):
            v = x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
            if not _finite(v):
                return False
            states[s + 1, i] = v
    return True


@njit
def _seir_vjp(y, beta, alpha, gamma, v, ybar):
    S = y[0]
    E = y[1]
    I = y[2]
    N = y[0] + y[1] + y[2] + y[3]
    c = v[1] - v[0]
    F = beta * S * I / N
    ybar[0] = c * (beta * I / N - F / N)
    ybar[1] = c * (-F / N) + alpha * (v[2] - v[1])
    ybar[2] = c * (beta * S / N - F / N) + gamma * (v[3] - v[2])
    ybar[3] = c * (-F / N)
    return c * S * I / N, E * (v[2] - v[1]), I * (v[3] - v[2])


@njit
def seir_backward(ts, stages, betas, alpha, gamma, seeds, gbetas):
    """Reverse sweep; returns (lambda_0, d/d alpha, d/d gamma) and accumulates ``gbetas``."""
    n = ts.shape[0] - 1
    lam = seeds[n].copy()
    kb1 = np.empty(4)
    kb2 = np.empty(4)
    kb3 = np.empty(4)
    kb4 = np.empty(4)
    yb = np.empty(4)
    ga = 0.0
    gg = 0.0
    for s in range(n - 1, -1, -1):
        h = ts[s + 1] - ts[s]
        for i in range(4):
            kb4[i] = h / 6.0 * lam[i]
            kb3[i] = h / 3.0 * lam[i]
            kb2[i] = h / 3.0 * lam[i]
            kb1[i] = h / 6.0 * lam[i]
        xbar = lam.copy()
        gb, da, dg = _seir_vjp(stages[s, 3], betas[2 * s + 2], alpha, gamma, kb4, yb)
        gbetas[2 * s + 2] += gb
        ga += da
        gg += dg
        for i in range(4):
            kb3[i] += h * yb[i]
            xbar[i] += yb[i]
        gb, da, dg = _seir_vjp(stages[s, 2], betas[2 * s + 1], alpha, gamma, kb3, yb)
        gbetas[2 * s + 1] += gb
        ga += da
        gg += dg
        for i in range(4):
            kb2[i] += 0.5 * h * yb[i]
            xbar[i] += yb[i]
        gb, da, dg = _seir_vjp(stages[s, 1], betas[2 * s + 1], alpha, gamma, kb2, yb)
        gbetas[2 * s + 1] += gb
        ga += da
        gg += dg
        for i in range(4):
            kb1[i] += 0.5 * h * yb[i]
            xbar[i] += yb[i]
        gb, da, dg = _seir_vjp(stages[s, 0], betas[2 * s], alpha, gamma, kb1, yb)
        gbetas[2 * s] += gb
        ga += da
        gg += dg
        for i in range(4):
            lam[i] = xbar[i] + yb[i] + seeds[s, i]
    return lam, ga, gg


@njit
def seir_net_grad(theta_net, sizes, poff, aoff, acts_store, outs, betas, gbetas, bounded, gtheta):
    width = 0
    for l in range(sizes.shape[0]):
        if sizes[l] > width:
            width = sizes[l]
    d_a = np.empty(width)
    d_b = np.empty(width)
    for m in range(outs.shape[0]):
        g = gbetas[m]
        if g == 0.0:
            continue
        if bounded:
            t = _tanh(outs[m])
            w = g * 1.5 * (1.0 - t * t)
        else:
            w = g * betas[m]
        mlp_backward(theta_net, sizes, poff, aoff, acts_store[m], w, gtheta, d_a, d_b)


# ---------------------------------------------------------------------------
# Quadratic dynamics: dx = alpha x - net(x)
# ---------------------------------------------------------------------------


@njit
def quad_forward(x0, ts, alpha, theta, sizes, poff, aoff, scale, states, stages, acts):
    """``acts`` has shape (n_steps, 4, n_act) and keeps every stage's activations."""
    n = ts.shape[0] - 1
    states[0] = x0
    for s in range(n):
        h = ts[s + 1] - ts[s]
        x = states[s]
        stages[s, 0] = x
        k1 = alpha * x - mlp_eval(theta, sizes, poff, aoff, x / scale, acts[s, 0])
        y = x + 0.5 * h * k1
        stages[s, 1] = y
        k2 = alpha * y - mlp_eval(theta, sizes, poff, aoff, y / scale, acts[s, 1])
        y = x + 0.5 * h * k2
        stages[s, 2] = y
        k3 = alpha * y - mlp_eval(theta, sizes, poff, aoff, y / scale, acts[s, 2])
        y = x + h * k3
        stages[s, 3] = y
        k4 = alpha * y - mlp_eval(theta, sizes, poff, aoff, y / scale, acts[s, 3])
        v = x + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not _finite(v):
            return False
        states[s + 1] = v
    return True


@njit
def quad_backward(ts, stages, acts, alpha, theta, sizes, poff, aoff, scale, seeds, gtheta):
    n = ts.shape[0] - 1
    width = 0
    for l in range(sizes.shape[0]):
        if sizes[l] > width:
            width = sizes[l]
    d_a = np.empty(width)
    d_b = np.empty(width)
    lam = seeds[n]
    ga = 0.0
    for s in range(n - 1, -1, -1):
        h = ts[s + 1] - ts[s]
        # stage 4 (input x + h k3)
        kb = h / 6.0 * lam
        du = mlp_backward(theta, sizes, poff, aoff, acts[s, 3], -kb, gtheta, d_a, d_b)
        yb = kb * alpha + du / scale
        ga += kb * stages[s, 3]
        kb3 = h / 3.0 * lam + h * yb
        xbar = lam + yb
        # stage 3 (input x + h/2 k2)
        du = mlp_backward(theta, sizes, poff, aoff, acts[s, 2], -kb3, gtheta, d_a, d_b)
        yb = kb3 * alpha + du / scale
        ga += kb3 * stages[s, 2]
        kb2 = h / 3.0 * lam + 0.5 * h * yb
        xbar += yb
        # stage 2 (input x + h/2 k1)
        du = mlp_backward(theta, sizes, poff, aoff, acts[s, 1], -kb2, gtheta, d_a, d_b)
        yb = kb2 * alpha + du / scale
        ga += kb2 * stages[s, 1]
        kb1 = h / 6.0 * lam + 0.5 * h * yb
        xbar += yb
        # stage 1 (input x)
        du = mlp_backward(theta, sizes, poff, aoff, acts[s, 0], -kb1, gtheta, d_a, d_b)
        yb = kb1 * alpha + du / scale
        ga += kb1 * stages[s, 0]
        lam = xbar + yb + seeds[s]
    return lam, ga
