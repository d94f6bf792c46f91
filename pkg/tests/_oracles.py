"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written in the most literal way possible
(scalar recursions, explicit loops, textbook formulas) and shares no code
with src/. Tests treat these as ground truth.
"""

from __future__ import annotations

import math

import numpy as np


def deboor_basis_scalar(knots: list[float], degree: int, i: int, x: float) -> float:
    """Cox-de Boor recursion, one basis function at a time, straight from the
    recurrence. 0/0 counts as 0. Intervals are half-open; the right end of the
    global domain is closed so the basis sums to one there too.
    """
    t = knots
    if degree == 0:
        hi = t[i + 1]
        # closed right end: the last nonempty interval absorbs x == max knot
        last_nonempty = max(j for j in range(len(t) - 1) if t[j] < t[j + 1])
        if i == last_nonempty and x == t[-1]:
            return 1.0
        return 1.0 if (t[i] <= x < hi) else 0.0
    left = 0.0
    den_l = t[i + degree] - t[i]
    if den_l > 0:
        left = (x - t[i]) / den_l * deboor_basis_scalar(t, degree - 1, i, x)
    right = 0.0
    den_r = t[i + degree + 1] - t[i + 1]
    if den_r > 0:
        right = (t[i + degree + 1] - x) / den_r * deboor_basis_scalar(t, degree - 1, i + 1, x)
    return left + right


def deboor_basis_vector(knots: list[float], degree: int, x: float) -> np.ndarray:
    n_basis = len(knots) - degree - 1
    return np.array([deboor_basis_scalar(list(knots), degree, i, x) for i in range(n_basis)])


def central_fd(f, x0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat vector."""
    x0 = np.asarray(x0, dtype=float)
    g = np.zeros_like(x0)
    for i in range(x0.size):
        xp = x0.copy()
        xm = x0.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def quantile_type7(samples, level: float) -> float:
    """Type-7 quantile by hand: linear interpolation of the order statistics."""
    s = sorted(float(v) for v in samples)
    n = len(s)
    if n == 1:
        return s[0]
    pos = level * (n - 1)
    lo = int(math.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return s[lo] * (1.0 - frac) + s[hi] * frac


def km_product_limit(y, delta) -> tuple[list[float], list[float]]:
    """Product-limit estimator with explicit counting. Returns (times, S(t))
    at the distinct observed times, events processed before censorings at ties.
    """
    y = [float(v) for v in y]
    delta = [int(v) for v in delta]
    times = sorted(set(y))
    surv = []
    s = 1.0
    for t in times:
        at_risk = sum(1 for v in y if v >= t)
        events = sum(1 for v, d in zip(y, delta) if v == t and d == 1)
        if at_risk > 0 and events > 0:
            s *= 1.0 - events / at_risk
        surv.append(s)
    return times, surv


def km_eval(times: list[float], surv: list[float], t: float) -> float:
    """Step-function value at t (right-continuous, 1 before the first time)."""
    out = 1.0
    for ti, si in zip(times, surv):
        if ti <= t:
            out = si
        else:
            break
    return out


def km_eval_left(times: list[float], surv: list[float], t: float) -> float:
    """Left limit S(t-)."""
    out = 1.0
    for ti, si in zip(times, surv):
        if ti < t:
            out = si
        else:
            break
    return out


def concordance_td_pairs(surv_at_event: np.ndarray, y, delta) -> tuple[float, int]:
    """O(n^2) time-dependent concordance.

    surv_at_event[i, j] is subject j's predicted survival evaluated at
    subject i's observed time. Comparable pairs: Y_i < Y_j with an event
    for i. Concordant when the i curve is lower at that time; ties count
    one half. Returns (concordance, number of comparable pairs).
    """
    n = len(y)
    num = 0.0
    den = 0
    for i in range(n):
        if delta[i] != 1:
            continue
        for j in range(n):
            if not (y[i] < y[j]):
                continue
            den += 1
            si = surv_at_event[i, i]
            sj = surv_at_event[i, j]
            if si < sj:
                num += 1.0
            elif si == sj:
                num += 0.5
    if den == 0:
        raise ZeroDivisionError("no comparable pairs")
    return num / den, den


def trapezoid(y, x) -> float:
    total = 0.0
    for k in range(1, len(x)):
        total += 0.5 * (y[k] + y[k - 1]) * (x[k] - x[k - 1])
    return total


# chi-square with 9 degrees of freedom: (upper tail p, quantile) pairs from
# standard printed tables, used to pin the p-value mapping.
CHI2_9_TABLE = [
    (0.995, 1.735),
    (0.975, 2.700),
    (0.950, 3.325),
    (0.900, 4.168),
    (0.500, 8.343),
    (0.100, 14.684),
    (0.050, 16.919),
    (0.025, 19.023),
    (0.010, 21.666),
    (0.005, 23.589),
]


def adam_reference_trace(theta0: float, grads: list[float], lr: float,
                         beta1: float = 0.9, beta2: float = 0.999,
                         eps: float = 1e-8) -> float:
    """Bias-corrected Adam on a single scalar, one step per listed gradient."""
    m = 0.0
    v = 0.0
    theta = theta0
    for step, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** step)
        v_hat = v / (1 - beta2 ** step)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
    return theta
