"""Independent reference implementations used only by the tests.

Nothing here imports production numerics. Loops are plain Python, the GSHI
reference runs in 50-digit arithmetic, and exponents come from decimal
literals rather than the production table.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import mpmath

# (base weight, group scale) per mode id, as decimal strings.
WEIGHTS = [
    ("1.30", "1.00"),  # fog
    ("1.10", "1.00"),  # rain
    ("1.20", "1.00"),  # snow
    ("1.30", "1.00"),  # low light
    ("1.40", "1.10"),  # motion blur
    ("1.40", "1.10"),  # defocus blur
    ("1.50", "1.10"),  # glare
    ("0.70", "1.10"),  # vignetting
    ("1.10", "0.95"),  # sensor noise
    ("1.00", "0.95"),  # exposure shift
    ("0.80", "0.95"),  # jpeg
    ("1.60", "1.15"),  # lens occlusion
]


def exponents_mp():
    with mpmath.workdps(50):
        return [mpmath.mpf(w) * mpmath.mpf(a) for w, a in WEIGHTS]


def gshi_oracle(s) -> float:
    with mpmath.workdps(50):
        total = mpmath.mpf(1)
        for si, e in zip(s, exponents_mp()):
            keep = 1 - mpmath.mpf(float(si))
            if keep == 0:
                return 0.0
            total *= mpmath.exp(e * mpmath.log(keep))
        return float(total)


def mae_oracle(pred, target) -> float:
    return math.fsum(abs(float(p) - float(t)) for p, t in zip(pred, target)) / len(pred)


def severity_mae_oracle(pred, target, presence) -> float:
    errs = []
    for prow, trow, arow in zip(pred, target, presence):
        for p, t, a in zip(prow, trow, arow):
            if a:
                errs.append(abs(float(p) - float(t)))
    return math.fsum(errs) / len(errs)


def ap_oracle(scores, labels) -> Fraction:
    """Exact AP by walking the ranked list; ties keep input order."""
    ranked = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits = [bool(labels[i]) for i in ranked]
    prec = []
    tp = 0
    for k, h in enumerate(hits, start=1):
        tp += h
        prec.append(Fraction(tp, k))
    npos = sum(hits)
    total = Fraction(0)
    for k, h in enumerate(hits):
        if h:
            total += max(prec[k:])
    return total / npos


def pearson_oracle(x, y) -> float:
    n = len(x)
    mx = math.fsum(x) / n
    my = math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def lead_oracle(sev, health, det, tau, delta):
    """Returns (s_warn, s_fail, lead or status string)."""
    s_warn = next((s for s, h in zip(sev, health) if h < tau), None)
    clean = det[sev.index(0.0)]
    s_fail = next((s for s, d in zip(sev, det) if d < (1 - delta) * clean), None)
    if s_fail is None:
        return s_warn, None, "N/F"
    if s_warn is None:
        return None, s_fail, "N/W"
    return s_warn, s_fail, s_fail - s_warn


def _curve(errors_in_removal_order, steps):
    n = len(errors_in_removal_order)
    out = []
    for j in range(steps + 1):
        k = min(j * n // steps, n - 1)
        kept = errors_in_removal_order[k:]
        out.append(math.fsum(kept) / len(kept))
    return out


def ause_oracle(uncertainty, error, steps: int = 50) -> float:
    """Brute force: average the predicted curve over every order of tied pixels."""
    u = [float(v) for v in uncertainty]
    e = [float(v) for v in error]
    scale = max(e)
    if scale <= 0:
        return 0.0
    levels = sorted(set(u), reverse=True)
    groups = [[e[i] for i in range(len(u)) if u[i] == lv] for lv in levels]
    curves = []
    for combo in itertools.product(*(set(itertools.permutations(g)) for g in groups)):
        curves.append(_curve([v for g in combo for v in g], steps))
    pred = [math.fsum(c[j] for c in curves) / len(curves) for j in range(steps + 1)]
    orac = _curve(sorted(e, reverse=True), steps)
    diff = [(p - o) / scale for p, o in zip(pred, orac)]
    h = 1.0 / steps
    area = math.fsum(h * (diff[j] + diff[j + 1]) / 2 for j in range(steps))
    return min(1.0, max(0.0, area))


def box_mean_oracle(u, x0, y0, x1, y1) -> float:
    vals = [u[y][x] for y in range(y0, y1) for x in range(x0, x1)]
    return math.fsum(vals) / len(vals)
