"""Independent reference implementations used to check the package.

Everything here is deliberately naive (plain loops, direct definitions,
LAPACK for exact norms, mpmath for high-precision arithmetic) and never
calls the code paths it is checking.
"""

import math

import mpmath
import numpy as np


def exact_norm(matrix):
    """Top singular value via LAPACK SVD."""
    return float(np.linalg.svd(np.asarray(matrix, dtype=float), compute_uv=False)[0])


def exact_norm_eig(matrix):
    """Cross-check route: largest eigenvalue of M^T M."""
    m = np.asarray(matrix, dtype=float)
    return float(math.sqrt(max(np.linalg.eigvalsh(m.T @ m).max(), 0.0)))


def naive_conv1d(weights, x, stride=1, pad=0):
    """Triple-loop 1-D cross-correlation; weights (C_out, C_in, K), x (C_in, L)."""
    c_out, c_in, ksize = weights.shape
    xp = np.zeros((c_in, x.shape[1] + 2 * pad))
    xp[:, pad : pad + x.shape[1]] = x
    lo = (xp.shape[1] - ksize) // stride + 1
    out = np.zeros((c_out, lo))
    for co in range(c_out):
        for u in range(lo):
            acc = 0.0
            for ci in range(c_in):
                for k in range(ksize):
                    acc += weights[co, ci, k] * xp[ci, u * stride + k]
            out[co, u] = acc
    return out


def naive_conv2d(weights, x, stride=1, pad=(0, 0)):
    """Loop 2-D cross-correlation; weights (C_out, C_in, KH, KW), x (C_in, H, W)."""
    c_out, c_in, kh, kw = weights.shape
    ph, pw = pad
    xp = np.zeros((c_in, x.shape[1] + 2 * ph, x.shape[2] + 2 * pw))
    xp[:, ph : ph + x.shape[1], pw : pw + x.shape[2]] = x
    ho = (xp.shape[1] - kh) // stride + 1
    wo = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for co in range(c_out):
        for u in range(ho):
            for v in range(wo):
                acc = 0.0
                for ci in range(c_in):
                    for a in range(kh):
                        for b in range(kw):
                            acc += weights[co, ci, a, b] * xp[ci, u * stride + a, v * stride + b]
                out[co, u, v] = acc
    return out


def naive_matvec(a, v):
    m, n = a.shape
    out = np.zeros(m)
    for i in range(m):
        acc = 0.0
        for j in range(n):
            acc += a[i, j] * v[j]
        out[i] = acc
    return out


def operator_from_apply(apply_fn, input_shape, output_shape):
    """Build the dense matrix of any linear map by probing unit inputs."""
    n = int(np.prod(input_shape))
    m = int(np.prod(output_shape))
    mat = np.zeros((m, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        mat[:, j] = np.asarray(apply_fn(e.reshape(input_shape))).reshape(-1)
    return mat


def naive_cdf(values, gamma):
    """Linear-scan fraction of entries <= gamma."""
    count = 0
    for v in values:
        if v <= gamma:
            count += 1
    return count / len(values)


def naive_quantile(sorted_values, q):
    """First sample value whose linear-scan CDF reaches q; q=0 gives the minimum."""
    if q == 0:
        return sorted_values[0]
    for v in sorted_values:
        if naive_cdf(sorted_values, v) >= q:
            return v
    return sorted_values[-1]


def naive_spearman(x, y):
    """Average-rank assignment by sorting, then a textbook Pearson correlation."""

    def ranks(vals):
        n = len(vals)
        order = sorted(range(n), key=lambda i: vals[i])
        out = [0.0] * n
        i = 0
        while i < n:
            j = i
            while j + 1 < n and vals[order[j + 1]] == vals[order[i]]:
                j += 1
            avg = (i + j) / 2 + 1
            for idx in order[i : j + 1]:
                out[idx] = avg
            i = j + 1
        return out

    rx, ry = ranks(list(x)), ranks(list(y))
    n = len(rx)
    mx = sum(rx) / n
    my = sum(ry) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    vx = sum((a - mx) ** 2 for a in rx)
    vy = sum((b - my) ** 2 for b in ry)
    if vx == 0 or vy == 0:
        return float("nan")
    return cov / math.sqrt(vx * vy)


def naive_kendall(x, y):
    """Exhaustive pair enumeration with the tie-corrected denominator."""
    n = len(x)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            dx = x[i] - x[j]
            dy = y[i] - y[j]
            if dx == 0 and dy == 0:
                ties_x += 1
                ties_y += 1
            elif dx == 0:
                ties_x += 1
            elif dy == 0:
                ties_y += 1
            elif (dx > 0) == (dy > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - _tie_pair_count(x)) * (n0 - _tie_pair_count(y)))
    if denom == 0:
        return float("nan")
    return (concordant - discordant) / denom


def _tie_pair_count(vals):
    from collections import Counter

    return sum(c * (c - 1) // 2 for c in Counter(vals).values())


def hp_fixed_threshold_bound(train_margins, gamma1, gamma2, delta, n, complexity_constant):
    """Fixed-threshold bound recomputed with 50-digit arithmetic."""
    with mpmath.workdps(50):
        count = sum(1 for v in train_margins if v <= gamma2)
        empirical = mpmath.mpf(count) / len(train_margins)
        complexity = mpmath.mpf(complexity_constant) / (mpmath.mpf(gamma2) - mpmath.mpf(gamma1))
        confidence = mpmath.sqrt(mpmath.log(1 / mpmath.mpf(delta)) / (2 * n))
        return float(empirical + complexity + confidence)


def hp_quantile_bound(q, delta, n, input_bound, depth, tau, complexity_constant, gamma_hat):
    """Quantile-margin bound constant recomputed with 50-digit arithmetic."""
    with mpmath.workdps(50):
        q_ = mpmath.mpf(q)
        term2 = mpmath.sqrt(mpmath.log(2 / mpmath.mpf(delta)) / (2 * n))
        inner = mpmath.log(4 * (mpmath.mpf(input_bound) + depth) / mpmath.mpf(tau), 2)
        term3 = mpmath.sqrt(mpmath.log(inner) / n)
        return float(q_ + term2 + term3 + mpmath.mpf(complexity_constant) / mpmath.mpf(gamma_hat))
