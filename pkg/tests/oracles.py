"""Independent reference computations used only by the tests.

Nothing here imports the code under test.
"""

import cmath
import math


def scalar_kalman(zs, q, v, rho0=0.0, p0=1.0):
    """Textbook local-level filter, plain floats, no masking."""
    rho, p = rho0, p0
    rhos, ps, gains = [], [], []
    for z in zs:
        p_pred = p + q
        k = p_pred / (p_pred + v)
        rho = rho + k * (z - rho)
        p = (1 - k) * p_pred
        rhos.append(rho)
        ps.append(p)
        gains.append(k)
    return rhos, ps, gains


def riccati_fixed_point(q, v, p0=1.0, tol=1e-16, max_iter=10_000_000):
    """Iterate the predicted-variance map until it stops moving."""
    p = p0 + q
    for _ in range(max_iter):
        nxt = p * v / (p + v) + q
        if abs(nxt - p) <= tol * max(1.0, p):
            p = nxt
            break
        p = nxt
    return p, p / (p + v)


def direct_dft(x):
    n = len(x)
    return [sum(x[t] * cmath.exp(-2j * math.pi * k * t / n) for t in range(n)) for k in range(n)]


def brute_lfr(x, k_c):
    n = len(x)
    mean = sum(x) / n
    power = [abs(c) ** 2 for c in direct_dft([xi - mean for xi in x])]
    total = sum(power)
    if total < 1e-15:
        return 1.0
    low = set(range(0, k_c + 1)) | set(range(n - k_c, n)) if k_c else {0}
    return sum(power[k] for k in low) / total


def switches(labels):
    return sum(1 for a, b in zip(labels, labels[1:]) if a != b)
