"""Interacting-particle simulation of the controlled dynamics.

The N-particle system is advanced by an explicit Euler step with the current
empirical law substituted for the true one: each step adds drift times dt plus
volatility times sqrt(dt) Gaussian increments and wraps back to the torus.
Increments are drawn from counter-based streams keyed by (seed, step), so two
simulations with the same seed are driven by identical noise per particle
index (synchronous coupling) and results never depend on scheduling.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .calculus import CoefficientFamily, ControlDictionary, FeedbackControl
from .fourier import HarmonicFunction
from .measures import ParticleCloud, TorusMeasure, dumps_measure, load_measure, reduce_to_torus, sample_measure
from .metrics import n_star, rho_lambda
from .rng import gaussian_increments, generator_for


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    """Particle count, step size, horizon and seed of one simulation."""

    particles: int
    dt: float
    t0: float
    t1: float
    seed: int
    dim: int = 1
    noise_dim: int = 1

    def __post_init__(self):
        if self.particles < 2:
            raise ValueError("need at least 2 particles")
        if self.dt <= 0 or self.dt > self.t1 - self.t0:
            raise ValueError("dt must be positive and at most the horizon length")
        steps = (self.t1 - self.t0) / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError(f"horizon / dt = {steps!r} is not an integer step count")

    @property
    def steps(self) -> int:
        return int(round((self.t1 - self.t0) / self.dt))

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps + 1)

    def replaced(self, **kw) -> "SimulationConfig":
        from dataclasses import replace

        return replace(self, **kw)


@dataclass(frozen=True)
class ControlSignal:
    """Piecewise-constant-in-time feedback control path.

    `breakpoints` has one more entry than `entries`; entry i is applied on
    [breakpoints[i], breakpoints[i+1]).
    """

    breakpoints: np.ndarray
    entries: tuple[FeedbackControl, ...]

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or len(bp) != len(self.entries) + 1:
            raise ValueError("need len(entries) + 1 breakpoints")
        if np.any(np.diff(bp) <= 0):
            raise ValueError("breakpoints must be strictly increasing")
        bp.setflags(write=False)
        object.__setattr__(self, "breakpoints", bp)

    @staticmethod
    def constant(entry: FeedbackControl, t0: float, t1: float) -> "ControlSignal":
        return ControlSignal(np.array([t0, t1]), (entry,))

    @staticmethod
    def uniform(entries, t0: float, t1: float) -> "ControlSignal":
        entries = tuple(entries)
        return ControlSignal(np.linspace(t0, t1, len(entries) + 1), entries)

    def control_at(self, u: float) -> FeedbackControl:
        bp = self.breakpoints
        if u < bp[0] - 1e-12 or u > bp[-1] + 1e-12:
            raise ValueError(f"time {u} outside the signal span [{bp[0]}, {bp[-1]}]")
        idx = int(np.searchsorted(bp, u, side="right") - 1)
        return self.entries[min(max(idx, 0), len(self.entries) - 1)]

    def label(self) -> str:
        return ";".join(e.label for e in self.entries)


@dataclass(frozen=True)
class FlowTrajectory:
    """Simulated particle paths and the induced empirical law flow."""

    times: np.ndarray
    particles: np.ndarray  # (N, steps+1, d)
    controls_used: ControlSignal
    seed: int

    @property
    def particle_count(self) -> int:
        return self.particles.shape[0]

    @property
    def dim(self) -> int:
        return self.particles.shape[2]

    def law(self, j: int) -> ParticleCloud:
        n = self.particle_count
        return ParticleCloud(self.particles[:, j, :], np.full(n, 1.0 / n))

    @property
    def laws(self) -> list[ParticleCloud]:
        return [self.law(j) for j in range(len(self.times))]

    def terminal_law(self) -> ParticleCloud:
        return self.law(len(self.times) - 1)


def simulate_flow(
    mu0: TorusMeasure,
    signal: ControlSignal,
    coeffs: CoefficientFamily,
    cfg: SimulationConfig,
) -> FlowTrajectory:
    """Explicit Euler particle discretization of the controlled dynamics.

    The initial condition realizes cfg.particles i.i.d. draws from mu0; each
    step evaluates drift and volatility at the current empirical law and wraps
    the update back onto the torus.  Deterministic given cfg.seed.
    """
    n, d, dp = cfg.particles, cfg.dim, cfg.noise_dim
    if mu0.dim != d:
        raise ValueError("initial measure dimension does not match the config")
    x = sample_measure(mu0, n, (cfg.seed, "init")).points.copy()
    out = np.empty((n, cfg.steps + 1, d))
    out[:, 0, :] = x
    weights = np.full(n, 1.0 / n)
    sqdt = np.sqrt(cfg.dt)
    for j in range(cfg.steps):
        u = cfg.t0 + j * cfg.dt
        alpha = signal.control_at(u)
        a = alpha(x)
        moments = coeffs.moment_values_points(x, weights)
        b = coeffs.drift(x, moments, a)
        sig = coeffs.volatility(x, moments, a)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(sig))):
            raise SimulationError(f"non-finite coefficients at step {j} (time {u:.6g})")
        x = x + b * cfg.dt
        if np.any(sig):
            z = gaussian_increments(cfg.seed, j, (n, dp))
            x = x + np.einsum("nij,nj->ni", sig, z) * sqdt
        x = reduce_to_torus(x)
        out[:, j + 1, :] = x
    out.setflags(write=False)
    return FlowTrajectory(cfg.times(), out, signal, cfg.seed)


def payoff(trajectory: FlowTrajectory, coeffs: CoefficientFamily) -> float:
    """Left-endpoint quadrature of the running cost plus the terminal cost."""
    times = trajectory.times
    n = trajectory.particle_count
    weights = np.full(n, 1.0 / n)
    total = 0.0
    for j in range(len(times) - 1):
        x = trajectory.particles[:, j, :]
        alpha = trajectory.controls_used.control_at(float(times[j]))
        a = alpha(x)
        moments = coeffs.moment_values_points(x, weights)
        ell = coeffs.running_cost(x, moments, a)
        total += float(np.sum(weights * ell)) * (times[j + 1] - times[j])
    tail_moments = coeffs.moment_values_points(trajectory.particles[:, -1, :], weights)
    return total + float(coeffs.terminal_cost(tail_moments))


def simulate_payoff(mu0, signal, coeffs, cfg) -> float:
    return payoff(simulate_flow(mu0, signal, coeffs, cfg), coeffs)


# ---------------------------------------------------------------------------
# Law invariance and flow-stability probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvarianceReport:
    """Spread of payoff and terminal laws under initial resampling."""

    particle_counts: tuple[int, ...]
    payoff_spreads: tuple[float, ...]
    rho_spreads: tuple[float, ...]
    fitted_exponent: float
    payoffs: tuple[tuple[float, ...], ...]


def law_invariance_probe(
    mu0: TorusMeasure,
    signal: ControlSignal,
    coeffs: CoefficientFamily,
    cfg: SimulationConfig,
    trials: int,
    particle_counts=None,
    lam: float | None = None,
    cutoff: int = 32,
) -> InvarianceReport:
    """Re-simulates with freshly sampled initial particles and reports how the
    payoff and terminal-law spread shrink as the particle count grows."""
    if trials < 2:
        raise ValueError("need at least 2 trials")
    counts = tuple(particle_counts) if particle_counts is not None else (cfg.particles,)
    lam = float(n_star(cfg.dim)) if lam is None else lam
    payoff_spreads, rho_spreads, all_payoffs = [], [], []
    for n in counts:
        pays, laws = [], []
        for trial in range(trials):
            sub = cfg.replaced(particles=n, seed=int(generator_for(cfg.seed, "probe", n, trial).integers(2**62)))
            traj = simulate_flow(mu0, signal, coeffs, sub)
            pays.append(payoff(traj, coeffs))
            laws.append(traj.terminal_law())
        pays = np.array(pays)
        payoff_spreads.append(float(pays.std()))
        rho_pairs = [
            rho_lambda(laws[i], laws[i + 1], lam, cutoff).value for i in range(len(laws) - 1)
        ]
        rho_spreads.append(float(np.mean(rho_pairs)))
        all_payoffs.append(tuple(float(p) for p in pays))
    if len(counts) >= 2:
        logn = np.log(np.array(counts, dtype=float))
        spread = np.array(payoff_spreads)
        spread = np.where(spread > 0, spread, np.min(spread[spread > 0]) if np.any(spread > 0) else 1.0)
        slope = float(np.polyfit(logn, np.log(spread), 1)[0])
    else:
        slope = float("nan")
    return InvarianceReport(counts, tuple(payoff_spreads), tuple(rho_spreads), slope, tuple(all_payoffs))


@dataclass(frozen=True)
class FlowStabilityReport:
    """Ratios rho(law_u^mu, law_u^nu) / rho(mu, nu) under synchronous coupling."""

    horizons: tuple[float, ...]
    ratios: np.ndarray  # (pairs, horizons)
    fitted_constant: float  # max terminal ratio

    def constant_at(self, column: int) -> float:
        return float(np.max(self.ratios[:, column]))


def flow_stability_probe(
    pairs,
    signal: ControlSignal,
    coeffs: CoefficientFamily,
    cfg: SimulationConfig,
    lam: float | None = None,
    cutoff: int = 32,
    horizon_fractions=(0.25, 0.5, 0.75, 1.0),
) -> FlowStabilityReport:
    """Simulates both initial measures of each pair with identical increments
    per particle index and reports the metric contraction ratios."""
    lam = float(n_star(cfg.dim)) if lam is None else lam
    grid_idx = [int(round(f * cfg.steps)) for f in horizon_fractions]
    ratios = np.empty((len(pairs), len(grid_idx)))
    for p, (mu, nu) in enumerate(pairs):
        base = rho_lambda(mu, nu, lam, cutoff).value
        tr_mu = simulate_flow(mu, signal, coeffs, cfg)
        tr_nu = simulate_flow(nu, signal, coeffs, cfg)
        for c, j in enumerate(grid_idx):
            ratios[p, c] = rho_lambda(tr_mu.law(j), tr_nu.law(j), lam, cutoff).value / base
    horizons = tuple(cfg.t0 + cfg.dt * j for j in grid_idx)
    return FlowStabilityReport(horizons, ratios, float(np.max(ratios[:, -1])))


# ---------------------------------------------------------------------------
# Test functions along flows and the flow-derivative identity
# ---------------------------------------------------------------------------


class FlowTestFunction:
    """Scalar function of (time, measure) with explicit derivatives."""

    def value(self, t: float, mu: TorusMeasure) -> float:
        raise NotImplementedError

    def time_derivative(self, t: float, mu: TorusMeasure) -> float:
        raise NotImplementedError

    def measure_derivative(self, t: float, mu: TorusMeasure) -> HarmonicFunction:
        raise NotImplementedError


@dataclass(frozen=True)
class HalfMetricSquared(FlowTestFunction):
    """psi(t, mu) = 0.5 * rho_lam(mu, anchor)^2 at a fixed anchor measure."""

    anchor: TorusMeasure
    lam: float
    cutoff: int

    def value(self, t, mu):
        return 0.5 * rho_lambda(mu, self.anchor, self.lam, self.cutoff).value ** 2

    def time_derivative(self, t, mu):
        return 0.0

    def measure_derivative(self, t, mu):
        from .calculus import linear_derivative_rho_sq

        return linear_derivative_rho_sq(mu, self.anchor, self.lam, self.cutoff)


@dataclass(frozen=True)
class MomentObservable(FlowTestFunction):
    """psi(t, mu) = mu(f) for a fixed trigonometric polynomial f."""

    table: HarmonicFunction

    def value(self, t, mu):
        return mu.integrate(self.table.evaluate)

    def time_derivative(self, t, mu):
        return 0.0

    def measure_derivative(self, t, mu):
        return self.table


@dataclass(frozen=True)
class ConstantTestFunction(FlowTestFunction):
    c: float

    def value(self, t, mu):
        return self.c

    def time_derivative(self, t, mu):
        return 0.0

    def measure_derivative(self, t, mu):
        return HarmonicFunction.zero(mu.dim, 1)


def ito_flow_residual(
    psi: FlowTestFunction,
    trajectory: FlowTrajectory,
    coeffs: CoefficientFamily,
    second_order: str = "half",
    signed: bool = False,
) -> float:
    """Defect of the chain rule along the simulated law flow.

    Compares psi at the terminal law against psi at the initial law plus the
    left-endpoint quadrature of (time derivative + empirical mean of the
    generator applied to the measure derivative).  The diffusion term uses the
    "half" scaling by default, matching the simulated dynamics; the residual
    is O(dt) + O(N^{-1/2}).
    """
    from .calculus import SECOND_ORDER_SCALES, _generator_values, require_c2

    scale = SECOND_ORDER_SCALES[second_order]
    times = trajectory.times
    n = trajectory.particle_count
    weights = np.full(n, 1.0 / n)
    integral = 0.0
    for j in range(len(times) - 1):
        t = float(times[j])
        law = trajectory.law(j)
        x = trajectory.particles[:, j, :]
        table = psi.measure_derivative(t, law)
        require_c2(table)
        alpha = trajectory.controls_used.control_at(t)
        moments = coeffs.moment_values_points(x, weights)
        gen = _generator_values(table.gradient(x), table.hessian(x), x, moments, alpha, coeffs, scale)
        integral += (psi.time_derivative(t, law) + float(np.sum(weights * gen))) * (times[j + 1] - times[j])
    lhs = psi.value(float(times[-1]), trajectory.terminal_law())
    rhs = psi.value(float(times[0]), trajectory.law(0)) + integral
    return float(lhs - rhs) if signed else float(abs(lhs - rhs))


# ---------------------------------------------------------------------------
# Trajectory persistence: meta.txt, laws_<j>.txt, payoff.csv
# ---------------------------------------------------------------------------


def save_trajectory(trajectory: FlowTrajectory, coeffs: CoefficientFamily, out_dir, save_every: int = 1) -> list[str]:
    os.makedirs(out_dir, exist_ok=True)
    written = []
    meta = [
        "trajectory v1",
        f"particles {trajectory.particle_count}",
        f"dim {trajectory.dim}",
        f"steps {len(trajectory.times) - 1}",
        f"t0 {trajectory.times[0]:.17g}",
        f"t1 {trajectory.times[-1]:.17g}",
        f"seed {trajectory.seed}",
        f"signal {trajectory.controls_used.label()}",
        f"save_every {save_every}",
    ]
    with open(os.path.join(out_dir, "meta.txt"), "w") as fh:
        fh.write("\n".join(meta) + "\n")
    written.append("meta.txt")
    saved = list(range(0, len(trajectory.times), save_every))
    if saved[-1] != len(trajectory.times) - 1:
        saved.append(len(trajectory.times) - 1)
    for j in saved:
        name = f"laws_{j}.txt"
        with open(os.path.join(out_dir, name), "w") as fh:
            fh.write(dumps_measure(trajectory.law(j)))
        written.append(name)
    value = payoff(trajectory, coeffs)
    with open(os.path.join(out_dir, "payoff.csv"), "w") as fh:
        fh.write("payoff\n")
        fh.write(f"{value:.17g}\n")
    written.append("payoff.csv")
    return written


def load_trajectory_laws(run_dir) -> dict[int, TorusMeasure]:
    laws = {}
    for name in sorted(os.listdir(run_dir)):
        if name.startswith("laws_") and name.endswith(".txt"):
            j = int(name[len("laws_") : -len(".txt")])
            laws[j] = load_measure(os.path.join(run_dir, name))
    return laws
