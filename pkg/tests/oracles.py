"""Plain-Python reference implementations used as test oracles."""

import math

import numpy as np

C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2


# -- independent scalar oracles (plain Python loops) -------------------------


def oracle_psnr(x, y):
    vals = [(float(a) - float(b)) ** 2 for a, b in zip(np.ravel(x), np.ravel(y))]
    m = math.fsum(vals) / len(vals)
    return math.inf if m == 0 else 10 * math.log10(255**2 / m)


def oracle_ssim_global(x, y):
    xs = [float(v) for v in np.ravel(x)]
    ys = [float(v) for v in np.ravel(y)]
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    vx = math.fsum((a - mx) ** 2 for a in xs) / n
    vy = math.fsum((b - my) ** 2 for b in ys) / n
    cxy = math.fsum((a - mx) * (b - my) for a, b in zip(xs, ys)) / n
    return (2 * mx * my + C1) * (2 * cxy + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2))


def oracle_ssim_windowed(x, y, win=11, sigma=1.5):
    r = win // 2
    g = [math.exp(-(i * i) / (2 * sigma * sigma)) for i in range(-r, r + 1)]
    s = sum(g)
    g = [v / s for v in g]
    h, w = x.shape
    vals = []
    for i in range(h - win + 1):
        for j in range(w - win + 1):
            mx = my = xx = yy = xy = 0.0
            for a in range(win):
                for b in range(win):
                    wt = g[a] * g[b]
                    p, q = float(x[i + a, j + b]), float(y[i + a, j + b])
                    mx += wt * p
                    my += wt * q
                    xx += wt * p * p
                    yy += wt * q * q
                    xy += wt * p * q
            vx, vy, cxy = xx - mx * mx, yy - my * my, xy - mx * my
            vals.append((2 * mx * my + C1) * (2 * cxy + C2) / ((mx * mx + my * my + C1) * (vx + vy + C2)))
    return math.fsum(vals) / len(vals)


def oracle_focal(logits, y, alpha, gamma):
    """Class-averaged focal loss by direct summation, 1-based ``y``."""
    m = max(logits)
    ex = [math.exp(z - m) for z in logits]
    tot = math.fsum(ex)
    acc = []
    for n, an in enumerate(alpha, start=1):
        if n == y:
            pt = ex[n - 1] / tot
        else:
            pt = math.fsum(e for m, e in enumerate(ex, start=1) if m != n) / tot
        acc.append(-an * (1.0 - pt) ** gamma * math.log(max(pt, 1e-12)))
    return math.fsum(acc) / len(acc)


def oracle_infonce(q, kp, negs, tau):
    unit = lambda v: [a / math.sqrt(math.fsum(b * b for b in v)) for a in v]
    dot = lambda u, v: math.fsum(a * b for a, b in zip(u, v))
    q, kp = unit(q), unit(kp)
    pos = math.exp(dot(q, kp) / tau)
    neg = math.fsum(math.exp(dot(q, unit(k)) / tau) for k in negs)
    return -math.log(pos / (pos + neg))
