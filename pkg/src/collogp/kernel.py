"""SE-ARD kernel and closed-form covariances between partial derivatives
of a GP sample.

The kernel is amp * prod_k exp(-(z1_k - z2_k)^2 / (2 s_k)), where s_k is
the per-dimension squared length-scale (the quantity appearing as 1/s on
the diagonal of the precision) and amp the signal variance. Because it
factorizes over dimensions, a mixed partial derivative of any order is a
product of one-dimensional factors. With t = delta / sqrt(s) and n the
total per-dimension order, the n-th derivative of the 1-D factor in delta
is (-1)^n s^(-n/2) He_n(t) exp(-t^2/2) where He_n are the probabilists'
Hermite polynomials (the polynomial recurrence p_{n+1} = p_n' - (delta/s) p_n
written in normalized form). Differentiation w.r.t. the second argument
flips the sign of delta, contributing (-1)^b.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFinite, UnsupportedOrder

MAX_ORDER_PER_SIDE = 2  # per dimension, per argument; kernel order <= 4


@dataclass
class ArdParams:
    """Log-domain SE-ARD parameters: log squared length-scales and log amplitude."""

    log_s: np.ndarray
    log_amp: float = 0.0

    def __post_init__(self):
        self.log_s = np.atleast_1d(np.asarray(self.log_s, dtype=float))
        if self.log_s.ndim != 1 or self.log_s.size < 1:
            raise DimensionMismatch("log_s must be a nonempty vector")
        if not (np.isfinite(self.log_s).all() and np.isfinite(self.log_amp)):
            raise NonFinite("kernel parameters must be finite")

    @property
    def dim(self):
        return self.log_s.size

    @property
    def s(self):
        return np.exp(self.log_s)

    @property
    def amp(self):
        return float(np.exp(self.log_amp))

    def copy(self):
        return ArdParams(self.log_s.copy(), self.log_amp)


# A derivative operator is a tuple of per-dimension orders; the all-zero
# tuple is the identity (the function value itself).
DerivOp = tuple


def identity_op(dim):
    return (0,) * dim


def _check_ops(a, b, dim):
    a = tuple(int(x) for x in a)
    b = tuple(int(x) for x in b)
    if len(a) != dim or len(b) != dim:
        raise DimensionMismatch(f"operator dims {len(a)}/{len(b)} != input dim {dim}")
    if any(x < 0 for x in a + b):
        raise UnsupportedOrder("derivative orders must be non-negative")
    if any(x > MAX_ORDER_PER_SIDE for x in a + b):
        raise UnsupportedOrder(f"per-dimension order > {MAX_ORDER_PER_SIDE} not supported")
    return a, b


def _hermite_table(n_max, t):
    """He_0..He_{n_max} (probabilists') evaluated elementwise on t."""
    table = [np.ones_like(t)]
    if n_max >= 1:
        table.append(t.copy())
    for n in range(1, n_max):
        table.append(t * table[n] - n * table[n - 1])
    return table


def cov_block(a, b, Z1, Z2, p, with_grads=False):
    """Covariance block cov(D_a u(z1), D_b u(z2)) over two point sets.

    Z1: (n, d), Z2: (m, d). Returns the (n, m) block; with_grads additionally
    returns d/d log_s (d, n, m) and d/d log_amp (which equals the block).
    """
    Z1 = np.atleast_2d(np.asarray(Z1, dtype=float))
    Z2 = np.atleast_2d(np.asarray(Z2, dtype=float))
    d = p.dim
    if Z1.shape[1] != d or Z2.shape[1] != d:
        raise DimensionMismatch(f"point dims {Z1.shape[1]}/{Z2.shape[1]} != kernel dim {d}")
    a, b = _check_ops(a, b, d)
    s = p.s
    factors = []
    dfactors = [] if with_grads else None
    for k in range(d):
        n = a[k] + b[k]
        sqrt_s = np.sqrt(s[k])
        t = (Z1[:, None, k] - Z2[None, :, k]) / sqrt_s
        e = np.exp(-0.5 * t * t)
        he = _hermite_table(n + 1, t)
        sign = -1.0 if a[k] % 2 else 1.0
        scale = sign * s[k] ** (-0.5 * n)
        factors.append(scale * he[n] * e)
        if with_grads:
            dfactors.append(scale * e * (0.5 * t * he[n + 1] - 0.5 * n * he[n]))
    amp = p.amp
    value = amp * np.prod(factors, axis=0)
    if not with_grads:
        return value
    d_log_s = np.empty((d,) + value.shape)
    for k in range(d):
        g = amp * dfactors[k]
        for j in range(d):
            if j != k:
                g = g * factors[j]
        d_log_s[k] = g
    return value, d_log_s, value


def _as_row(z, d):
    z = np.asarray(z, dtype=float).ravel()
    if z.size != d:
        raise DimensionMismatch(f"point dim {z.size} != kernel dim {d}")
    return z.reshape(1, d)


def se_ard(z1, z2, p):
    """Plain kernel value at a pair of points."""
    d = p.dim
    v = cov_block(identity_op(d), identity_op(d), _as_row(z1, d), _as_row(z2, d), p)
    return float(v[0, 0])


def deriv_cov(a, b, z1, z2, p):
    """cov(D_a u(z1), D_b u(z2)) at a single pair of points."""
    d = p.dim
    v = cov_block(a, b, _as_row(z1, d), _as_row(z2, d), p)
    return float(v[0, 0])


def deriv_cov_grad(a, b, z1, z2, p):
    """Value and gradients of deriv_cov w.r.t. log_s (vector) and log_amp."""
    d = p.dim
    v, ds, damp = cov_block(a, b, _as_row(z1, d), _as_row(z2, d), p, with_grads=True)
    return float(v[0, 0]), ds[:, 0, 0].copy(), float(damp[0, 0])


def cov_matrix(groups, p):
    """Full symmetric covariance matrix over (operator, point set) groups.

    groups: list of (DerivOp, points) pairs. Blocks below the diagonal are
    the exact transposes of their mirror images, so the result is symmetric
    bit-for-bit.
    """
    pts = [np.atleast_2d(np.asarray(Z, dtype=float)) for _, Z in groups]
    sizes = [Z.shape[0] for Z in pts]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    P = int(offsets[-1])
    out = np.zeros((P, P))
    for i, (op_i, _) in enumerate(groups):
        for j in range(i, len(groups)):
            op_j = groups[j][0]
            blk = cov_block(op_i, op_j, pts[i], pts[j], p)
            out[offsets[i]:offsets[i + 1], offsets[j]:offsets[j + 1]] = blk
            if j != i:
                out[offsets[j]:offsets[j + 1], offsets[i]:offsets[i + 1]] = blk.T
    return out


def _fd_weights(order, h):
    """Central-difference stencil (offsets, weights) for a 1-D derivative."""
    if order == 0:
        return [(0.0, 1.0)]
    if order == 1:
        return [(h, 0.5 / h), (-h, -0.5 / h)]
    if order == 2:
        return [(h, 1.0 / h**2), (0.0, -2.0 / h**2), (-h, 1.0 / h**2)]
    raise UnsupportedOrder(f"stencil order {order} not supported")


def fd_deriv_cov(a, b, z1, z2, p, step=None):
    """Finite-difference oracle for deriv_cov.

    Composes central stencils across both arguments; the per-dimension step
    defaults to 1e-4 * sqrt(s_k). Stencil weights compound to 1/h^8 in the
    worst case, which float64 cannot survive, so the kernel is evaluated
    from its definition in 60-digit mpmath arithmetic instead of through
    se_ard.
    """
    import mpmath

    d = p.dim
    z1 = np.reshape(np.asarray(z1, dtype=float), (d,))
    z2 = np.reshape(np.asarray(z2, dtype=float), (d,))
    a, b = _check_ops(a, b, d)
    if any(a[k] + b[k] > 4 for k in range(d)):
        raise UnsupportedOrder("total per-dimension order > 4")
    base = 1e-4 * np.sqrt(p.s) if step is None else np.full(d, float(step))

    with mpmath.workdps(60):
        s = [mpmath.exp(mpmath.mpf(v)) for v in p.log_s]
        amp = mpmath.exp(mpmath.mpf(p.log_amp))

        def kernel(u1, u2):
            q = mpmath.mpf(0)
            for k in range(d):
                q += (u1[k] - u2[k]) ** 2 / (2 * s[k])
            return amp * mpmath.exp(-q)

        stencil = [(([mpmath.mpf(v) for v in z1], [mpmath.mpf(v) for v in z2]),
                    mpmath.mpf(1))]
        for k in range(d):
            h = mpmath.mpf(float(base[k]))
            for orders, side in ((a, 0), (b, 1)):
                nxt = []
                for pair, w in stencil:
                    for off, ww in _fd_weights(orders[k], h):
                        shifted = (list(pair[0]), list(pair[1]))
                        shifted[side][k] += off
                        nxt.append((shifted, w * ww))
                stencil = nxt
        total = mpmath.fsum(w * kernel(u1, u2) for (u1, u2), w in stencil)
        return float(total)
