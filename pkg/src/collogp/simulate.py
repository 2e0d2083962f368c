"""Ground-truth generation and dataset sampling.

Pendulum: fixed-step classic RK4 on the first-order system (theta, omega),
linear interpolation to query times. Diffusion-reaction: Fourier-spectral
in space with periodic boundaries and an integrating-factor RK4 in time
(diffusion handled exactly in Fourier space, the cubic reaction explicitly).

All randomness flows from numpy SeedSequence streams; nothing touches the
global RNG.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .errors import Instability, RangeOutOfDomain


@dataclass
class PendulumConfig:
    theta0: float = 0.75 * math.pi
    omega0: float = 0.0
    damping_b: float = 0.0
    step: float = 1e-3

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step must be > 0")
        if self.damping_b < 0:
            raise ValueError("damping_b must be >= 0")


@dataclass
class AllenCahnConfig:
    nu: float = 1e-4
    grid_x: int = 512          # points on [-1, 1), periodic
    dt: float = 1e-4
    t_end: float = 1.0
    gamma: float = 5.0         # reaction strength; 0 disables the reaction
    save_every: int = 10       # store every k-th time step

    def __post_init__(self):
        if self.grid_x % 2:
            raise ValueError("grid_x must be even")
        if self.dt <= 0 or self.t_end <= 0:
            raise ValueError("dt and t_end must be > 0")


@dataclass
class SamplingConfig:
    train_range: list          # per-dimension [lo, hi]
    test_range: list
    n_train: int
    n_test: int
    m_colloc: int = 0
    colloc_range: list = None  # defaults to test_range
    noise_var: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name, rng in (("train_range", self.train_range), ("test_range", self.test_range)):
            for lo, hi in rng:
                if not hi > lo:
                    raise ValueError(f"{name} interval [{lo}, {hi}] is empty")
        if min(self.n_train, self.n_test, self.m_colloc) < 0 or self.noise_var < 0:
            raise ValueError("counts must be >= 0 and noise_var >= 0")


def solve_pendulum(cfg, query_times):
    """theta at the query times; RK4 with fixed step, linear interpolation."""
    query_times = np.asarray(query_times, dtype=float).ravel()
    if query_times.size and query_times.min() < 0:
        raise RangeOutOfDomain("query times must be >= 0")
    t_max = float(query_times.max()) if query_times.size else 0.0
    n_steps = int(math.ceil(t_max / cfg.step)) + 1
    h = cfg.step
    b = cfg.damping_b

    def rhs(state):
        th, om = state
        return np.array([om, -math.sin(th) - b * om])

    grid = np.empty(n_steps + 1)
    state = np.array([cfg.theta0, cfg.omega0])
    grid[0] = state[0]
    for i in range(n_steps):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * h * k1)
        k3 = rhs(state + 0.5 * h * k2)
        k4 = rhs(state + h * k3)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        grid[i + 1] = state[0]
    times = np.arange(n_steps + 1) * h
    return np.interp(query_times, times, grid)


def pendulum_energy(cfg, times):
    """E = omega^2 / 2 - cos(theta) at the given times (solved jointly)."""
    times = np.asarray(times, dtype=float).ravel()
    t_max = float(times.max())
    n_steps = int(math.ceil(t_max / cfg.step)) + 1
    h = cfg.step
    b = cfg.damping_b

    def rhs(state):
        th, om = state
        return np.array([om, -math.sin(th) - b * om])

    thetas = np.empty(n_steps + 1)
    omegas = np.empty(n_steps + 1)
    state = np.array([cfg.theta0, cfg.omega0])
    thetas[0], omegas[0] = state
    for i in range(n_steps):
        k1 = rhs(state)
        k2 = rhs(state + 0.5 * h * k1)
        k3 = rhs(state + 0.5 * h * k2)
        k4 = rhs(state + h * k3)
        state = state + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        thetas[i + 1], omegas[i + 1] = state
    grid_t = np.arange(n_steps + 1) * h
    th = np.interp(times, grid_t, thetas)
    om = np.interp(times, grid_t, omegas)
    return 0.5 * om * om - np.cos(th)


@dataclass
class GridSolution:
    """Rectangular space-time solution with bilinear interpolation access."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray  # shape (len(t), len(x))

    def __call__(self, points):
        """points: (n, 2) rows of (x, t)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        xq, tq = pts[:, 0], pts[:, 1]
        if (tq.min() < self.t[0] - 1e-12 or tq.max() > self.t[-1] + 1e-12
                or xq.min() < self.x[0] - 1e-12 or xq.max() > self.x[-1] + 1e-12):
            raise RangeOutOfDomain("query outside the solved grid")
        it = np.clip(np.searchsorted(self.t, tq) - 1, 0, self.t.size - 2)
        ix = np.clip(np.searchsorted(self.x, xq) - 1, 0, self.x.size - 2)
        wt = (tq - self.t[it]) / (self.t[it + 1] - self.t[it])
        wx = (xq - self.x[ix]) / (self.x[ix + 1] - self.x[ix])
        u = self.u
        return ((1 - wt) * (1 - wx) * u[it, ix] + (1 - wt) * wx * u[it, ix + 1]
                + wt * (1 - wx) * u[it + 1, ix] + wt * wx * u[it + 1, ix + 1])


def solve_allen_cahn(cfg):
    """Periodic diffusion-reaction solve on [-1, 1] x [0, t_end].

    Returns a GridSolution whose x axis carries both endpoints (the
    periodic image at +1 duplicates the value at -1).
    """
    n = cfg.grid_x
    x = -1.0 + 2.0 * np.arange(n) / n
    u = x * x * np.cos(np.pi * x)
    k = np.fft.rfftfreq(n, d=2.0 / n) * 2.0 * np.pi
    lam = -cfg.nu * k * k
    dt = cfg.dt
    n_steps = int(round(cfg.t_end / dt))
    E_half = np.exp(0.5 * dt * lam)
    E_full = np.exp(dt * lam)

    def reaction_hat(u_hat):
        ur = np.fft.irfft(u_hat, n=n)
        return np.fft.rfft(cfg.gamma * (ur - ur ** 3))

    saved = [u.copy()]
    saved_t = [0.0]
    u_hat = np.fft.rfft(u)
    for step in range(1, n_steps + 1):
        # integrating-factor RK4: v' = e^{-L t} N(e^{L t} v)
        k1 = reaction_hat(u_hat)
        k2 = reaction_hat(E_half * (u_hat + 0.5 * dt * k1))
        k3 = reaction_hat(E_half * u_hat + 0.5 * dt * k2)
        k4 = reaction_hat(E_full * u_hat + dt * E_half * k3)
        u_hat = (E_full * u_hat
                 + (dt / 6.0) * (E_full * k1 + 2.0 * E_half * (k2 + k3) + k4))
        if step % cfg.save_every == 0 or step == n_steps:
            ur = np.fft.irfft(u_hat, n=n)
            if np.abs(ur).max() > 10.0:
                raise Instability(f"|u| exceeded 10 at t = {step * dt:.4g}")
            saved.append(ur.copy())
            saved_t.append(step * dt)
    u_grid = np.asarray(saved)
    # append the periodic image at x = +1 so the grid covers [-1, 1]
    x_full = np.concatenate([x, [1.0]])
    u_full = np.concatenate([u_grid, u_grid[:, :1]], axis=1)
    return GridSolution(t=np.asarray(saved_t), x=x_full, u=u_full)


def _uniform(rng, ranges, count):
    lo = np.array([r[0] for r in ranges], dtype=float)
    hi = np.array([r[1] for r in ranges], dtype=float)
    return lo + (hi - lo) * rng.random((count, len(ranges)))


def sample_dataset(accessor, cfg):
    """Draw (train, test) sets from a solution accessor.

    accessor maps an (n, d) array of inputs to n target values. Gaussian
    noise of variance cfg.noise_var is added to the training targets only;
    test targets are exact. Deterministic per cfg.seed.
    """
    ss = np.random.SeedSequence(cfg.seed)
    rng_train, rng_test, rng_noise = (np.random.default_rng(s) for s in ss.spawn(3))
    Xtr = _uniform(rng_train, cfg.train_range, cfg.n_train)
    Xte = _uniform(rng_test, cfg.test_range, cfg.n_test)
    ytr = np.asarray(accessor(Xtr), dtype=float).ravel()
    yte = np.asarray(accessor(Xte), dtype=float).ravel()
    if cfg.noise_var > 0:
        ytr = ytr + math.sqrt(cfg.noise_var) * rng_noise.standard_normal(cfg.n_train)
    return (Xtr, ytr), (Xte, yte)


def sample_collocation(ranges, m, seed):
    """m random points in the given per-dimension ranges, seeded.

    Uses a Latin hypercube draw (one point per equal-width bin along each
    dimension, bin order permuted) rather than plain uniform sampling: at the
    small m typical for collocation sets, uniform draws can leave gaps much
    wider than the kernel length-scale, which disconnects the constraint
    coupling between neighbouring points. Stratification bounds the largest
    gap while the points remain random.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    if m == 0:
        return np.zeros((0, len(ranges)))
    sampler = qmc.LatinHypercube(d=len(ranges), seed=rng)
    unit = sampler.random(m)
    lo = [r[0] for r in ranges]
    hi = [r[1] for r in ranges]
    return qmc.scale(unit, lo, hi)
