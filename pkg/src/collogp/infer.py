"""Whitened stochastic variational inference.

The latent vector is reparameterized as f = A eta with A = chol(Sigma), so
the prior over eta is standard normal regardless of kernel parameters. The
variational posterior q(eta) = N(mu, L L^T) is trained by maximizing the
reparameterized ELBO with Adam; gradients flow into kernel parameters
through the factorization via the Cholesky reverse-mode rule.

All Monte-Carlo draws come from a generator seeded by the training config,
so a run is a pure function of (data, config).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import model as mdl
from .equation import eval_residual_adjoint
from .errors import DimensionMismatch, NonFinite
from .linalg import JitterPolicy, cholesky, cholesky_backward
from .model import LOG_2PI


@dataclass
class VariationalState:
    """Whitened posterior q(eta) = N(mu, L L^T).

    The factor is stored as a lower-triangular array whose diagonal holds
    log(L_ii), so any unconstrained update keeps the factor valid.
    """

    mu: np.ndarray
    raw_tril: np.ndarray

    @classmethod
    def initial(cls, P):
        # mu = 0, L = I: q starts at the whitened prior
        return cls(mu=np.zeros(P), raw_tril=np.zeros((P, P)))

    @property
    def size(self):
        return self.mu.size

    @property
    def L(self):
        L = np.tril(self.raw_tril, -1)
        L[np.diag_indices_from(L)] = np.exp(np.diag(self.raw_tril))
        return L

    def copy(self):
        return VariationalState(self.mu.copy(), self.raw_tril.copy())


@dataclass
class TrainConfig:
    lr: float = 1e-2
    epochs: int = 1000
    mc_samples: int = 10
    seed: int = 0
    eval_interval: int = 10
    learn_v: bool = True
    learn_beta: bool = True
    learn_hypers: bool = True
    learn_coeffs: bool = True
    jitter: JitterPolicy = field(default_factory=JitterPolicy)
    mnll_noise_free: bool = False

    def __post_init__(self):
        if self.lr <= 0 or self.epochs < 1 or self.mc_samples < 1:
            raise ValueError("lr > 0, epochs >= 1, mc_samples >= 1 required")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n):
        return cls(m=np.zeros(n), v=np.zeros(n))


def adam_step(adam, params_flat, grads, lr):
    """One bias-corrected Adam ascent step; returns the updated vector."""
    if params_flat.shape != grads.shape or adam.m.shape != params_flat.shape:
        raise DimensionMismatch("parameter/gradient/moment shapes differ")
    adam.t += 1
    adam.m = adam.beta1 * adam.m + (1 - adam.beta1) * grads
    adam.v = adam.beta2 * adam.v + (1 - adam.beta2) * grads * grads
    mhat = adam.m / (1 - adam.beta1 ** adam.t)
    vhat = adam.v / (1 - adam.beta2 ** adam.t)
    return params_flat + lr * mhat / (np.sqrt(vhat) + adam.eps)


@dataclass
class TrainData:
    """Training inputs/targets plus the collocation points (may be empty)."""

    X: np.ndarray
    y: np.ndarray
    colloc: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.colloc = np.atleast_2d(np.asarray(self.colloc, dtype=float)) \
            if np.size(self.colloc) else np.zeros((0, self.X.shape[1]))
        if self.X.shape[0] != self.y.size:
            raise DimensionMismatch("X rows != y length")


@dataclass
class TrainTrace:
    elbo: list = field(default_factory=list)
    evals: list = field(default_factory=list)   # dicts: epoch, rmse, mnll
    best: dict = None                           # epoch, rmse, mnll, state, params
    final: dict = None
    final_state: object = None
    final_params: object = None


def kl_standard_normal(state):
    """KL(q(eta) || N(0, I)) in closed form; zero iff mu = 0, L = I."""
    L = state.L
    P = state.size
    val = 0.5 * (state.mu @ state.mu + np.sum(L * L) - P) - float(np.sum(np.diag(state.raw_tril)))
    if not np.isfinite(val):
        raise NonFinite("KL is not finite")
    return float(val)


# --- parameter flattening ----------------------------------------------------


class _Packer:
    """Flatten (state, params) into one vector for Adam, with a learnability
    mask derived from the config flags."""

    def __init__(self, layout, spec, params, cfg):
        P = layout.size
        d = params.kernel_u.dim
        self.P = P
        self.d = d
        self.spec = spec
        self.tril_idx = np.tril_indices(P)
        self.own_g = [i for i, k in enumerate(params.kernel_g) if k is not None]
        self.coeff_names = [c.name for c in spec.coeffs] if spec is not None else []
        sizes = [P, self.tril_idx[0].size, d, 1]
        sizes += [d + 1] * len(self.own_g)
        sizes += [1, 1, len(self.coeff_names)]
        self.bounds = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        mask = np.ones(self.bounds[-1])
        i = 4 + len(self.own_g)  # segment index of log_beta
        if not cfg.learn_hypers:
            for seg in range(2, 4 + len(self.own_g)):
                mask[self.bounds[seg]:self.bounds[seg + 1]] = 0.0
        if not cfg.learn_beta:
            mask[self.bounds[i]:self.bounds[i + 1]] = 0.0
        if not cfg.learn_v:
            mask[self.bounds[i + 1]:self.bounds[i + 2]] = 0.0
        if not cfg.learn_coeffs:
            mask[self.bounds[i + 2]:self.bounds[i + 3]] = 0.0
        self.mask = mask

    def _segments(self, vec):
        return [vec[self.bounds[i]:self.bounds[i + 1]] for i in range(len(self.bounds) - 1)]

    def pack(self, state, params):
        parts = [state.mu, state.raw_tril[self.tril_idx],
                 params.kernel_u.log_s, [params.kernel_u.log_amp]]
        for i in self.own_g:
            parts.append(params.kernel_g[i].log_s)
            parts.append([params.kernel_g[i].log_amp])
        parts += [[params.log_beta], [params.log_v],
                  [params.coeffs[n] for n in self.coeff_names]]
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    def unpack(self, vec, state, params):
        segs = self._segments(vec)
        state.mu = segs[0].copy()
        state.raw_tril = np.zeros((self.P, self.P))
        state.raw_tril[self.tril_idx] = segs[1]
        params.kernel_u.log_s = segs[2].copy()
        params.kernel_u.log_amp = float(segs[3][0])
        k = 4
        for i in self.own_g:
            params.kernel_g[i].log_s = segs[k][:self.d].copy()
            params.kernel_g[i].log_amp = float(segs[k][self.d])
            k += 1
        params.log_beta = float(segs[k][0])
        params.log_v = float(segs[k + 1][0])
        for j, n in enumerate(self.coeff_names):
            params.coeffs[n] = float(segs[k + 2][j])

    def pack_grads(self, g):
        parts = [g["mu"], g["raw_tril"][self.tril_idx], g["log_s_u"], [g["log_amp_u"]]]
        for i in self.own_g:
            gs, ga = g[("g", i)]
            parts.append(gs)
            parts.append([ga])
        parts += [[g["log_beta"]], [g["log_v"]],
                  [g["coeffs"].get(n, 0.0) for n in self.coeff_names]]
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])


# --- ELBO and its gradient ---------------------------------------------------


def _elbo_core(state, params, data, spec, layout, eps, policy, with_grad):
    """Shared forward/backward pass; eps is the (P, S) standard-normal draw."""
    P, S = eps.shape
    n, M = layout.n_train, layout.m_colloc
    Sigma = mdl.build_sigma(layout, data.X, data.colloc, params)
    A, jit = cholesky(Sigma, policy)
    L = state.L
    H = state.mu[:, None] + L @ eps
    F = A @ H

    beta, v = params.beta, params.v
    u = layout.block(F, "train")
    ry = data.y[:, None] - u
    sq_y = np.sum(ry * ry, axis=0)
    dll = 0.5 * n * (params.log_beta - LOG_2PI) - 0.5 * beta * sq_y

    has_eq = spec is not None and M > 0
    if has_eq:
        feats = layout.feature_blocks(F)
        srcs = layout.source_blocks(F)
        coeffs_nat = params.coeff_values(spec)
        R = mdl.eval_residual(spec, feats, srcs, coeffs_nat)
        sq_r = np.sum(R * R, axis=0)
        vll = -0.5 * M * (params.log_v + LOG_2PI) - 0.5 * sq_r / v
    else:
        vll = np.zeros(S)

    kl = kl_standard_normal(state)
    elbo = -kl + float(np.mean(dll + vll))
    if not np.isfinite(elbo):
        raise NonFinite("ELBO estimate is not finite")
    if not with_grad:
        return elbo, jit, None

    F_adj = np.zeros_like(F)
    si, _ = layout.offsets["train"]
    F_adj[si:si + n] += beta * ry / S
    g_log_beta = float(np.mean(0.5 * n - 0.5 * beta * sq_y))
    g_log_v = 0.0
    g_coeffs = {}
    if has_eq:
        R_adj = -R / (v * S)
        f_adjs, s_adjs, c_adj = eval_residual_adjoint(spec, feats, srcs, coeffs_nat, R_adj)
        for i in range(len(layout.feature_ops)):
            fs, fl = layout.offsets[("feature", i)]
            F_adj[fs:fs + fl] += f_adjs[i]
        for i in range(layout.n_sources):
            ss, sl = layout.offsets[("source", i)]
            F_adj[ss:ss + sl] += s_adjs[i]
        g_log_v = float(np.mean(-0.5 * M + 0.5 * sq_r / v))
        for c in spec.coeffs:
            g = c_adj[c.name]
            g_coeffs[c.name] = g * coeffs_nat[c.name] if c.positive else g

    # back through f = A (mu + L eps)
    A_adj = np.tril(F_adj @ H.T)
    H_adj = A.T @ F_adj
    g_mu = H_adj.sum(axis=1)
    g_L = np.tril(H_adj @ eps.T)
    # KL terms (ELBO carries -KL)
    g_mu -= state.mu
    g_L -= L
    diagL = np.diag(L).copy()
    g_L[np.diag_indices(P)] += 1.0 / diagL
    g_raw = np.tril(g_L)
    g_raw[np.diag_indices(P)] = np.diag(g_L) * diagL  # chain through log-diagonal

    Sigma_adj = cholesky_backward(A, A_adj)
    if jit > 0 and policy.scale_by_mean_diag and np.trace(Sigma) > 0:
        Sigma_adj = Sigma_adj + (jit * np.trace(Sigma_adj) / P) * np.eye(P)
    kgrads = mdl.sigma_param_grads(layout, data.X, data.colloc, params, Sigma_adj)
    grads = {
        "mu": g_mu,
        "raw_tril": g_raw,
        "log_s_u": kgrads["u"][0],
        "log_amp_u": kgrads["u"][1],
        "log_beta": g_log_beta,
        "log_v": g_log_v,
        "coeffs": g_coeffs,
    }
    for key, val in kgrads.items():
        if key != "u":
            grads[key] = val
    return elbo, jit, grads


def _draw_eps(rng, P, S):
    return rng.standard_normal((P, S))


def elbo_estimate(state, params, data, spec, rng, S, policy=None, layout=None):
    """Reparameterized Monte-Carlo ELBO; deterministic given the generator state."""
    policy = policy or JitterPolicy()
    layout = layout or mdl.build_layout(data.y.size, data.colloc.shape[0], spec)
    eps = _draw_eps(rng, layout.size, S)
    elbo, _, _ = _elbo_core(state, params, data, spec, layout, eps, policy, with_grad=False)
    return elbo


def elbo_grad(state, params, data, spec, rng, S, policy=None, layout=None):
    """Gradients of the same MC estimate (same eps draws as elbo_estimate
    for an identically seeded generator)."""
    policy = policy or JitterPolicy()
    layout = layout or mdl.build_layout(data.y.size, data.colloc.shape[0], spec)
    eps = _draw_eps(rng, layout.size, S)
    elbo, _, grads = _elbo_core(state, params, data, spec, layout, eps, policy, with_grad=True)
    return elbo, grads


def train(data, spec, model_init, cfg, eval_set=None, truth_noise_free=True):
    """Adam ascent on the ELBO with periodic held-out evaluation.

    eval_set: optional (X_eval, y_eval); every cfg.eval_interval epochs (and
    at the last epoch) RMSE/MNLL are computed through the posterior GP and
    the best-RMSE snapshot is kept. Returns the full TrainTrace.
    """
    from .predict import PosteriorGP, mnll, rmse

    layout = mdl.build_layout(data.y.size, data.colloc.shape[0], spec)
    P = layout.size
    state = VariationalState.initial(P)
    params = model_init.copy()
    packer = _Packer(layout, spec, params, cfg)
    vec = packer.pack(state, params)
    adam = AdamState.zeros(vec.size)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    trace = TrainTrace()

    def evaluate(epoch):
        post = PosteriorGP.build(layout, data.X, data.colloc, params, state, cfg.jitter, spec)
        pred = post.predict_u(eval_set[0])
        r = rmse(pred.mean, eval_set[1])
        m = mnll(pred, 0.0 if cfg.mnll_noise_free else 1.0 / params.beta, eval_set[1])
        rec = {"epoch": epoch, "rmse": r, "mnll": m}
        trace.evals.append(rec)
        if trace.best is None or r < trace.best["rmse"]:
            trace.best = {**rec, "state": state.copy(), "params": params.copy()}
        return rec

    last = None
    for epoch in range(cfg.epochs):
        eps = _draw_eps(rng, P, cfg.mc_samples)
        try:
            elbo, _, grads = _elbo_core(state, params, data, spec, layout, eps,
                                        cfg.jitter, with_grad=True)
        except NonFinite as exc:
            raise NonFinite(f"epoch {epoch}: {exc}") from exc
        trace.elbo.append(elbo)
        gvec = packer.pack_grads(grads) * packer.mask
        if not np.isfinite(gvec).all():
            raise NonFinite(f"epoch {epoch}: non-finite gradient")
        vec = adam_step(adam, vec, gvec, cfg.lr)
        packer.unpack(vec, state, params)
        if eval_set is not None and ((epoch + 1) % cfg.eval_interval == 0
                                     or epoch == cfg.epochs - 1):
            last = evaluate(epoch)
    if eval_set is not None and last is not None:
        trace.final = last
    trace.final_state = state
    trace.final_params = params
    return trace
