"""Associated Legendre functions in q dimensions and their Hermite limit.

The one-axis factor of the recursive harmonic basis on a (q-1)-sphere is

    Ptilde_s^r(t; q) = sqrt(q)^(s+r) * (s!/2^r) * Gamma((q-1)/2)
        * sum_l (-1/4)^l (1-t^2)^(l+r/2) t^(s-r-2l)
          / ( l! (s-r-2l)! Gamma(l+r+(q-1)/2) ),     l = 0..floor((s-r)/2).

As q = 3N-p grows with t = w/sqrt(2*N*eps0) fixed, these converge at rate
O(1/sqrt(N)) to scaled Hermite polynomials,

    Ptilde_s^r -> 2^((r-s)/2) * (s!/(s-r)!) * H_{s-r}( sqrt(3/(4 eps0)) w ),

with H_k the physicists' Hermite polynomial (leading coefficient 2^k).
Gamma ratios are evaluated through log-Gamma differences so that q up to
a few times 1e5 stays exact to near machine precision.
"""

from __future__ import annotations

import math

import numpy as np


def hermite(k: int, x):
    """Physicists' Hermite polynomial H_k(x) by the three-term recurrence.

    H_{k+1} = 2x H_k - 2k H_{k-1}; works on scalars or arrays.
    """
    if k < 0 or int(k) != k:
        raise ValueError(f"degree must be a nonnegative integer, got {k}")
    x = np.asarray(x, dtype=float)
    h_prev = np.ones_like(x)
    if k == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = 2.0 * x
    for m in range(1, k):
        h, h_prev = 2.0 * x * h - 2.0 * m * h_prev, h
    return h if h.ndim else float(h)


def hermite_deriv(k: int, x):
    """Exact derivative H_k'(x) = 2k H_{k-1}(x)."""
    if k == 0:
        x = np.asarray(x, dtype=float)
        return np.zeros_like(x) if x.ndim else 0.0
    return 2.0 * k * hermite(k - 1, x)


def gamma_ratio(x: float, a: float) -> float:
    """Gamma(x)/Gamma(a+x) via log-Gamma differences; x > 0, a >= 0."""
    if x <= 0.0:
        raise ValueError(f"gamma_ratio needs x > 0, got {x}")
    if a < 0.0:
        raise ValueError(f"gamma_ratio needs a >= 0, got {a}")
    return math.exp(math.lgamma(x) - math.lgamma(a + x))


def assoc_legendre_qdim(s: int, r: int, t, q: int):
    """Evaluate Ptilde_s^r(t; q) for |t| <= 1, 0 <= r <= s, q >= 3.

    Each term is assembled in log space (the raw Gamma factors overflow
    long before the term itself does), so s <= 12 with q up to 3e5 is safe.
    Accepts scalar or array t.
    """
    if r < 0 or r > s:
        raise ValueError(f"order r={r} must lie in [0, s={s}]")
    if q < 3:
        raise ValueError(f"dimension parameter q={q} must be >= 3")
    t = np.asarray(t, dtype=float)
    if np.any(np.abs(t) > 1.0 + 1e-14):
        raise ValueError("argument t must lie in [-1, 1]")
    t = np.clip(t, -1.0, 1.0)

    one_mt2 = 1.0 - t * t
    half_qm1 = 0.5 * (q - 1.0)
    base = (
        0.5 * (s + r) * math.log(q)
        + math.lgamma(s + 1.0)
        - r * math.log(2.0)
    )
    total = np.zeros_like(t)
    for l in range((s - r) // 2 + 1):
        k = s - r - 2 * l
        logc = (
            base
            - l * math.log(4.0)
            - math.lgamma(l + 1.0)
            - math.lgamma(k + 1.0)
            + math.lgamma(half_qm1)
            - math.lgamma(l + r + half_qm1)
        )
        sign = -1.0 if l % 2 else 1.0
        total = total + sign * math.exp(logc) * one_mt2 ** (l + 0.5 * r) * t**k
    return total if total.ndim else float(total)


def legendre_limit(s: int, r: int, w, eps0: float):
    """Pointwise large-dimension limit of Ptilde_s^r(w/sqrt(2*N*eps0); 3N-p).

    Equals 2^((r-s)/2) * (s!/(s-r)!) * H_{s-r}(sqrt(3/(4*eps0)) * w).  The
    combinatorial factor comes from the (s over r) structure of the finite
    sum and is the unique choice for which the finite-q functions converge
    (checked for every r <= s <= 4 in the tests).
    """
    if eps0 <= 0.0:
        raise ValueError(f"eps0 must be positive, got {eps0}")
    if r < 0 or r > s:
        raise ValueError(f"order r={r} must lie in [0, s={s}]")
    w = np.asarray(w, dtype=float)
    x = np.sqrt(3.0 / (4.0 * eps0)) * w
    scale = 2.0 ** (0.5 * (r - s)) * math.factorial(s) / math.factorial(s - r)
    out = scale * hermite(s - r, x)
    return out if np.ndim(out) else float(out)


def asymptotic_error(s: int, r: int, w: float, eps0: float, p: int, N: int) -> float:
    """|Ptilde_s^r(w/sqrt(2*N*eps0); 3N-p) - legendre_limit(s, r, w, eps0)|.

    Requires N > max(p/3, w^2/(2*eps0)) so the argument stays in [-1, 1]
    and the dimension stays >= 3.
    """
    if N <= max(p / 3.0, w * w / (2.0 * eps0)):
        raise ValueError(f"N={N} too small for p={p}, w={w}, eps0={eps0}")
    t = w / math.sqrt(2.0 * N * eps0)
    fin = assoc_legendre_qdim(s, r, t, 3 * N - p)
    lim = legendre_limit(s, r, w, eps0)
    return abs(float(fin) - float(lim))
