"""Joint Gaussian prior over [u(train); derivative features; sources] and
the data / virtual likelihoods.

The flat latent vector f is laid out as the training-function block first,
then one block per declared derivative feature at the collocation points
(declaration order), then one block per latent source. The covariance is
block structured: everything derived from the target function forms one
dense block under kernel_u; each source gets its own dense block; cross
blocks between the u part and sources are identically zero (independent
GPs).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernel as kern
from .equation import eval_residual
from .errors import DimensionMismatch
from .kernel import ArdParams, identity_op

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class JointPriorLayout:
    n_train: int
    m_colloc: int
    feature_ops: list
    n_sources: int
    offsets: dict = field(default_factory=dict)

    @property
    def size(self):
        return self.n_train + self.m_colloc * (len(self.feature_ops) + self.n_sources)

    def block(self, values, key):
        start, length = self.offsets[key]
        return values[start:start + length]

    def feature_blocks(self, values):
        return [self.block(values, ("feature", i)) for i in range(len(self.feature_ops))]

    def source_blocks(self, values):
        return [self.block(values, ("source", i)) for i in range(self.n_sources)]


@dataclass
class ModelParams:
    """All trainable non-variational parameters, log-domain where positive.

    kernel_g entries that are None alias kernel_u (shared parameters).
    coeffs stores the raw optimized value: log(c) for positive coefficients,
    c itself otherwise; positivity is looked up in the equation spec.
    """

    kernel_u: ArdParams
    kernel_g: list = field(default_factory=list)
    log_beta: float = math.log(100.0)
    log_v: float = math.log(1e-2)
    coeffs: dict = field(default_factory=dict)

    @property
    def beta(self):
        return math.exp(self.log_beta)

    @property
    def v(self):
        return math.exp(self.log_v)

    def g_kernel(self, i):
        k = self.kernel_g[i]
        return self.kernel_u if k is None else k

    def coeff_values(self, spec):
        """name -> natural-domain value, exponentiating positive coefficients."""
        out = {}
        for c in spec.coeffs:
            raw = self.coeffs[c.name]
            out[c.name] = math.exp(raw) if c.positive else raw
        return out

    def copy(self):
        return ModelParams(
            kernel_u=self.kernel_u.copy(),
            kernel_g=[None if k is None else k.copy() for k in self.kernel_g],
            log_beta=self.log_beta,
            log_v=self.log_v,
            coeffs=dict(self.coeffs),
        )


def init_params(spec, dim, s_init=1.0, amp_init=1.0, beta_init=100.0, v_init=1e-2):
    """Defaults: s = 1, amp = 1, beta = 100, v = 1e-2; coefficients from
    their declared inits (log-domain when positive)."""
    s = np.full(dim, float(s_init)) if np.isscalar(s_init) else np.asarray(s_init, dtype=float)
    ku = ArdParams(np.log(s), math.log(amp_init))
    kg = []
    coeffs = {}
    if spec is not None:
        for src in spec.sources:
            kg.append(None if src.share_u_params else ArdParams(np.log(s.copy()), math.log(amp_init)))
        for c in spec.coeffs:
            coeffs[c.name] = math.log(c.init) if c.positive else c.init
    return ModelParams(kernel_u=ku, kernel_g=kg, log_beta=math.log(beta_init),
                       log_v=math.log(v_init), coeffs=coeffs)


def build_layout(n_train, m_colloc, spec):
    """Deterministic offsets: train u, then features in declaration order,
    then sources in declaration order."""
    feature_ops = list(spec.features) if spec is not None else []
    n_sources = len(spec.sources) if spec is not None else 0
    lay = JointPriorLayout(n_train=int(n_train), m_colloc=int(m_colloc),
                           feature_ops=feature_ops, n_sources=n_sources)
    off = 0
    lay.offsets["train"] = (0, lay.n_train)
    off = lay.n_train
    for i in range(len(feature_ops)):
        lay.offsets[("feature", i)] = (off, m_colloc)
        off += m_colloc
    for i in range(n_sources):
        lay.offsets[("source", i)] = (off, m_colloc)
        off += m_colloc
    return lay


def u_groups(layout, train_inputs, colloc_inputs, dim):
    """(operator, points) groups making up the dense u block, train first."""
    groups = [(identity_op(dim), train_inputs)]
    for op in layout.feature_ops:
        groups.append((op, colloc_inputs))
    return groups


def build_sigma(layout, train_inputs, colloc_inputs, params):
    """Prior covariance of f: dense u block, dense per-source blocks,
    zero cross-covariance between the u part and the sources."""
    train_inputs = np.atleast_2d(np.asarray(train_inputs, dtype=float))
    dim = params.kernel_u.dim
    P = layout.size
    Sigma = np.zeros((P, P))
    groups = u_groups(layout, train_inputs, colloc_inputs, dim)
    nu = layout.n_train + layout.m_colloc * len(layout.feature_ops)
    Sigma[:nu, :nu] = kern.cov_matrix(groups, params.kernel_u)
    for i in range(layout.n_sources):
        start, length = layout.offsets[("source", i)]
        Sigma[start:start + length, start:start + length] = kern.cov_matrix(
            [(identity_op(dim), colloc_inputs)], params.g_kernel(i))
    return Sigma


def sigma_param_grads(layout, train_inputs, colloc_inputs, params, Sigma_adj):
    """Contract a symmetric cotangent of Sigma into kernel-parameter space.

    Returns {"u": (d_log_s, d_log_amp), ("g", i): ... for non-shared source
    kernels}; shared source kernels fold into the "u" entry.
    """
    train_inputs = np.atleast_2d(np.asarray(train_inputs, dtype=float))
    dim = params.kernel_u.dim
    groups = u_groups(layout, train_inputs, colloc_inputs, dim)
    keys = ["train"] + [("feature", i) for i in range(len(layout.feature_ops))]
    d_log_s_u = np.zeros(dim)
    d_log_amp_u = 0.0
    for i, (op_i, Zi) in enumerate(groups):
        si, li = layout.offsets[keys[i]]
        for j in range(i, len(groups)):
            op_j, Zj = groups[j]
            sj, lj = layout.offsets[keys[j]]
            _, d_s, d_amp = kern.cov_block(op_i, op_j, Zi, Zj, params.kernel_u, with_grads=True)
            adj = Sigma_adj[si:si + li, sj:sj + lj]
            w = 1.0 if i == j else 2.0  # symmetric cotangent, mirrored block
            d_log_s_u += w * np.tensordot(d_s, adj, axes=([1, 2], [0, 1]))
            d_log_amp_u += w * float(np.sum(d_amp * adj))
    out = {"u": (d_log_s_u, d_log_amp_u)}
    zero = identity_op(dim)
    for i in range(layout.n_sources):
        start, length = layout.offsets[("source", i)]
        _, d_s, d_amp = kern.cov_block(zero, zero, colloc_inputs, colloc_inputs,
                                       params.g_kernel(i), with_grads=True)
        adj = Sigma_adj[start:start + length, start:start + length]
        gs = np.tensordot(d_s, adj, axes=([1, 2], [0, 1]))
        ga = float(np.sum(d_amp * adj))
        if params.kernel_g[i] is None:
            d_log_s_u += gs
            d_log_amp_u += ga
            out["u"] = (d_log_s_u, d_log_amp_u)
        else:
            out[("g", i)] = (gs, ga)
    return out


def data_loglik(values, layout, y, params):
    """Sum_n log N(y_n | u(z_n), beta^-1); values may carry a trailing
    sample axis, in which case a per-sample vector is returned."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] != layout.n_train:
        raise DimensionMismatch(f"y length {y.shape[0]} != n_train {layout.n_train}")
    u = layout.block(values, "train")
    r = y.reshape(y.shape + (1,) * (u.ndim - 1)) - u
    beta = params.beta
    sq = np.sum(r * r, axis=0)
    out = 0.5 * layout.n_train * (params.log_beta - LOG_2PI) - 0.5 * beta * sq
    return out if np.ndim(out) else float(out)


def residual_at(values, layout, spec, params):
    """Equation residual evaluated on the relevant blocks of f."""
    feats = layout.feature_blocks(values)
    srcs = [layout.block(values, ("source", i)) for i in range(layout.n_sources)]
    return eval_residual(spec, feats, srcs, params.coeff_values(spec))


def virtual_loglik(values, layout, spec, params):
    """Sum_m log N(0 | residual_m, v); batched like data_loglik."""
    R = residual_at(values, layout, spec, params)
    sq = np.sum(R * R, axis=0)
    out = -0.5 * layout.m_colloc * (params.log_v + LOG_2PI) - 0.5 * sq / params.v
    return out if np.ndim(out) else float(out)


def log_joint(values, y, spec, params, layout, Sigma_chol):
    """log N(f | 0, Sigma) + data + virtual log-likelihoods, prior term via
    the supplied Cholesky factor."""
    import scipy.linalg

    f = np.asarray(values, dtype=float)
    w = scipy.linalg.solve_triangular(Sigma_chol, f, lower=True)
    logdet = float(np.sum(np.log(np.diag(Sigma_chol))))
    prior = -0.5 * float(w @ w) - logdet - 0.5 * layout.size * LOG_2PI
    total = prior + data_loglik(f, layout, y, params)
    if spec is not None and layout.m_colloc > 0:
        total += virtual_loglik(f, layout, spec, params)
    return total
