"""Value-function machinery at desk scale.

Contains the scalar reduced problem on the circle solved two independent ways
(a monotone finite-difference sweep and a direct trajectory-optimization
ladder), a generic control search that returns certified upper bounds on the
value, the dynamic-programming residual check, and empirical regularity
probes in space and time.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .calculus import CoefficientFamily, ControlDictionary, FeedbackControl
from .dynamics import ControlSignal, SimulationConfig, payoff, simulate_flow
from .measures import ParticleCloud, TorusMeasure, sample_measure, torus_distance
from .metrics import n_star, rho_lambda
from .rng import gaussian_increments, generator_for

TWO_PI = 2.0 * np.pi


class CFLError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# The reduced scalar problem on the circle
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EikonalProblem:
    """Scalar horizon-[0,1] problem: minimize quadratic control cost plus a
    state cost L along controlled paths on the circle.

    L is a periodic lookup table on [-pi, pi] with linear interpolation; its
    declared Lipschitz constant is validated on the table nodes.
    """

    cost_nodes: np.ndarray  # (m+1,) uniform nodes covering [-pi, pi]
    cost_values: np.ndarray  # (m+1,) L at the nodes, L(-pi) == L(pi)
    n_time: int
    n_space: int
    lipschitz_bound: float

    def __post_init__(self):
        nodes = np.asarray(self.cost_nodes, dtype=float)
        vals = np.asarray(self.cost_values, dtype=float)
        if nodes.shape != vals.shape or nodes.ndim != 1 or len(nodes) < 3:
            raise ValueError("cost table needs matching 1-d nodes/values with >= 3 points")
        if abs(nodes[0] + np.pi) > 1e-12 or abs(nodes[-1] - np.pi) > 1e-12:
            raise ValueError("cost nodes must cover [-pi, pi]")
        if abs(vals[0] - vals[-1]) > 1e-12:
            raise ValueError("cost table must be periodic: L(-pi) == L(pi)")
        slopes = np.abs(np.diff(vals) / np.diff(nodes))
        if np.max(slopes) > self.lipschitz_bound * (1.0 + 1e-9):
            raise ValueError(
                f"cost table slope {np.max(slopes):.6g} exceeds the declared Lipschitz bound {self.lipschitz_bound:.6g}"
            )
        nodes.setflags(write=False)
        vals.setflags(write=False)
        object.__setattr__(self, "cost_nodes", nodes)
        object.__setattr__(self, "cost_values", vals)

    @staticmethod
    def from_function(L, n_nodes: int = 512, n_time: int = 200, n_space: int = 200, lipschitz_bound: float | None = None) -> "EikonalProblem":
        nodes = np.linspace(-np.pi, np.pi, n_nodes + 1)
        vals = np.asarray(L(nodes), dtype=float)
        vals[-1] = vals[0]
        if lipschitz_bound is None:
            lipschitz_bound = float(np.max(np.abs(np.diff(vals) / np.diff(nodes)))) * 1.01 + 1e-12
        return EikonalProblem(nodes, vals, n_time, n_space, lipschitz_bound)

    def cost_at(self, y) -> np.ndarray:
        """L(y) for any real y, reduced periodically into [-pi, pi]."""
        yy = np.mod(np.asarray(y, dtype=float) + np.pi, TWO_PI) - np.pi
        return np.interp(yy, self.cost_nodes, self.cost_values)


@dataclass(frozen=True)
class ValueTable:
    """Grid values of the reduced value function with scheme metadata."""

    times: np.ndarray  # (n_t+1,), increasing, last entry is the horizon
    nodes: np.ndarray  # (n_y,) uniform on [-pi, pi)
    values: np.ndarray  # (n_t+1, n_y)
    scheme: str
    cfl_ratio: float
    error_estimate: float

    def __post_init__(self):
        if self.values.shape != (len(self.times), len(self.nodes)):
            raise ValueError("value array shape does not match the grids")
        if np.max(np.abs(self.values[-1])) != 0.0:
            raise ValueError("terminal row must be exactly zero")

    @property
    def dy(self) -> float:
        return TWO_PI / len(self.nodes)

    def interpolate(self, t: float, y) -> np.ndarray:
        """Bilinear interpolation, periodic in space, clamped in time."""
        times = self.times
        t = min(max(float(t), times[0]), times[-1])
        i = min(int(np.searchsorted(times, t, side="right") - 1), len(times) - 2)
        wt = (t - times[i]) / (times[i + 1] - times[i])
        yy = np.mod(np.asarray(y, dtype=float) + np.pi, TWO_PI) - np.pi
        pos = (yy + np.pi) / self.dy
        j = np.floor(pos).astype(int) % len(self.nodes)
        frac = pos - np.floor(pos)
        jn = (j + 1) % len(self.nodes)
        row = (1 - wt) * self.values[i] + wt * self.values[i + 1]
        return (1 - frac) * row[j] + frac * row[jn]

    def monotone_in_time_defect(self) -> float:
        """Max increase of w along increasing time (0 for a clean table)."""
        return float(np.max(np.diff(self.values, axis=0), initial=0.0))


def eikonal_solve(p: EikonalProblem, max_substeps: int = 10_000) -> ValueTable:
    """Monotone artificial-viscosity sweep backward from the zero terminal row.

    Each base step is subdivided so that dt * theta <= 0.9 * dy with theta the
    current gradient bound; exceeding `max_substeps` raises CFLError.
    """
    n_y, n_t = p.n_space, p.n_time
    dy = TWO_PI / n_y
    nodes = -np.pi + dy * np.arange(n_y)
    Lvals = p.cost_at(nodes)
    times = np.linspace(0.0, 1.0, n_t + 1)
    values = np.zeros((n_t + 1, n_y))
    w = np.zeros(n_y)
    worst_ratio = 0.0
    for i in range(n_t - 1, -1, -1):
        dt_base = times[i + 1] - times[i]
        remaining = dt_base
        substeps = 0
        while remaining > 1e-15:
            p_plus = (np.roll(w, -1) - w) / dy
            p_minus = (w - np.roll(w, 1)) / dy
            theta = max(float(np.max(np.abs(0.5 * (p_plus + p_minus)))), p.lipschitz_bound * 1e-3, 1e-9)
            h = min(remaining, 0.9 * dy / theta)
            substeps += 1
            if substeps > max_substeps:
                raise CFLError(f"time step at t={times[i]:.4g} needs more than {max_substeps} substeps")
            pbar = 0.5 * (p_plus + p_minus)
            w = w + h * (Lvals - 0.5 * pbar * pbar) + 0.5 * h * theta * (p_plus - p_minus)
            worst_ratio = max(worst_ratio, h * theta / dy)
            remaining -= h
        values[i] = w
    return ValueTable(times, nodes, values, "monotone-lf", worst_ratio, error_estimate=dy)


def semi_lagrangian_table(p: EikonalProblem, n_time: int, n_space: int, n_controls: int, a_max: float = 3.0) -> ValueTable:
    """Discrete-control dynamic programming on the (t, y) grid.

    Backward recursion: value = min over controls of step cost plus the
    interpolated continuation at the transported node.  Entirely independent
    of the finite-difference sweep.
    """
    dy = TWO_PI / n_space
    nodes = -np.pi + dy * np.arange(n_space)
    Lvals = p.cost_at(nodes)
    times = np.linspace(0.0, 1.0, n_time + 1)
    dt = times[1] - times[0]
    controls = np.linspace(-a_max, a_max, n_controls)
    values = np.zeros((n_time + 1, n_space))
    w = np.zeros(n_space)
    for i in range(n_time - 1, -1, -1):
        best = np.full(n_space, np.inf)
        for a in controls:
            shift = a * dt / dy
            m = int(np.floor(shift))
            frac = shift - m
            cont = (1.0 - frac) * np.roll(w, -m) + frac * np.roll(w, -(m + 1))
            cand = dt * (0.5 * a * a + Lvals) + cont
            best = np.minimum(best, cand)
        w = best
        values[i] = w
    return ValueTable(times, nodes, values, "semi-lagrangian", 0.0, error_estimate=dy)


def eikonal_trajectory_oracle(
    p: EikonalProblem,
    t: float,
    y: float,
    tol: float = 1e-3,
    base: tuple[int, int, int] = (50, 64, 13),
    max_levels: int = 5,
    a_max: float = 3.0,
) -> float:
    """Direct trajectory optimization refined until two ladder levels agree.

    Doubles the time/space/control resolution per level and stops when two
    successive levels agree to `tol` at the queried point.
    """
    prev = None
    for level in range(max_levels):
        n_t = base[0] * 2**level
        n_y = base[1] * 2**level
        n_a = base[2] * 2**level + 1
        table = semi_lagrangian_table(p, n_t, n_y, n_a, a_max)
        val = float(table.interpolate(t, y))
        if prev is not None and abs(val - prev) <= tol:
            return val
        prev = val
    return float(prev)


def eikonal_pde_residual(coarse: ValueTable, fine: ValueTable, p: EikonalProblem, stability_tol: float = 2e-2):
    """Interior defect of the scalar equation at points where the numerical
    gradient is stable under refinement.

    Returns (max residual over stable points, fraction of stable points).
    """
    times, nodes, w = coarse.times, coarse.nodes, coarse.values
    dy = coarse.dy
    dt = times[1] - times[0]
    wy = (np.roll(w, -1, axis=1) - np.roll(w, 1, axis=1)) / (2 * dy)
    wt = (w[1:, :] - w[:-1, :]) / dt  # forward in time, defined on rows 0..n_t-1
    wy_fine = np.empty_like(wy)
    for i, t in enumerate(times):
        h = dy * 0.5
        wy_fine[i] = (fine.interpolate(t, nodes + h) - fine.interpolate(t, nodes - h)) / (2 * h)
    stable = np.abs(wy - wy_fine) < stability_tol
    stable = stable[:-1, :]
    resid = np.abs(-wt + 0.5 * wy[:-1, :] ** 2 - p.cost_at(nodes)[None, :])
    if not np.any(stable):
        return float("nan"), 0.0
    return float(np.max(resid[stable])), float(np.mean(stable))


# ---------------------------------------------------------------------------
# Reduction map: measures to the scalar state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LiftedMean:
    """Mean of the mass lifted to the interval centered at the circular median."""

    mean: float
    flagged: bool
    edge_mass: float


def lifted_mean(mu: TorusMeasure, edge_fraction: float = 0.025, max_candidates: int = 512) -> LiftedMean:
    """Coordinate mean after lifting mass to [-pi, pi) around the circular median.

    Flagged when more than `edge_fraction` of the mass sits within pi/4 of
    both ends of the lift interval, i.e. when no representative interval keeps
    the mass away from the cut.
    """
    pts, masses = mu.quadrature()
    x = pts[:, 0]
    if len(x) > max_candidates:
        order = np.argsort(x, kind="stable")
        cand = x[order[:: max(1, len(x) // max_candidates)]]
    else:
        cand = x
    best_c, best_obj = 0.0, np.inf
    for c in cand:
        delta = np.mod(x - c + np.pi, TWO_PI) - np.pi
        obj = float(np.sum(masses * np.abs(delta)))
        if obj < best_obj - 1e-15:
            best_obj, best_c = obj, float(c)
    delta = np.mod(x - best_c + np.pi, TWO_PI) - np.pi
    lifted = best_c + delta
    mean = float(np.sum(masses * lifted))
    mean = float(np.mod(mean + np.pi, TWO_PI) - np.pi)
    left = float(np.sum(masses[delta < -np.pi + np.pi / 4]))
    right = float(np.sum(masses[delta > np.pi - np.pi / 4]))
    flagged = left > edge_fraction and right > edge_fraction
    return LiftedMean(mean, flagged, max(left, right))


@dataclass(frozen=True)
class ReducedValue:
    value: float
    mean: float
    flagged: bool


def reduced_value(t: float, mu: TorusMeasure, table: ValueTable) -> ReducedValue:
    """Reduced value w(t, mean of mu) for one-dimensional measures."""
    if mu.dim != 1:
        raise ValueError("reduced values are defined for d=1 only")
    lift = lifted_mean(mu)
    return ReducedValue(float(table.interpolate(t, lift.mean)), lift.mean, lift.flagged)


# ---------------------------------------------------------------------------
# Control search over signals built from a dictionary
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ValueSearchResult:
    """Upper bound on the value with Monte-Carlo error bars.

    `value` is the mean payoff of the best signal over independent
    re-simulations (never claimed to be the value itself); `search_value` is
    the deterministic search-stage estimate used to rank signals.
    """

    value: float
    stderr: float
    signal: ControlSignal
    search_value: float
    leaves: int
    flagged_partial: bool


def _advance_interval(x, weights, entry, coeffs, dt, increments):
    """Euler steps over one signal interval; returns (state, running cost).

    `increments` holds one pre-drawn Gaussian block per step, shared across
    all branches advanced over the same interval (common random numbers).
    """
    cost = 0.0
    sqdt = np.sqrt(dt)
    from .measures import reduce_to_torus

    for z in increments:
        a = entry(x)
        moments = coeffs.moment_values_points(x, weights)
        ell = coeffs.running_cost(x, moments, a)
        cost += float(np.sum(weights * ell)) * dt
        b = coeffs.drift(x, moments, a)
        sig = coeffs.volatility(x, moments, a)
        x = x + b * dt
        if np.any(sig):
            x = x + np.einsum("nij,nj->ni", sig, z) * sqdt
        x = reduce_to_torus(x)
    return x, cost


def value_search(
    t: float,
    mu0: TorusMeasure,
    family: CoefficientFamily,
    dictionary: ControlDictionary,
    cfg: SimulationConfig,
    depth: int = 4,
    search_particles: int = 400,
    steps_per_interval: int | None = None,
    reps: int = 8,
    beam_width: int | None = None,
    max_leaves: int = 20_000,
    terminal_value=None,
) -> ValueSearchResult:
    """Upper bound on the value at (t, mu0) by searching signal space.

    Signals are piecewise constant over `depth` uniform intervals with pieces
    from the dictionary.  The search shares prefixes and common random
    numbers; the winning signal is re-simulated `reps` times at full scale for
    the reported value and error bars.  `terminal_value(t1, law)` overrides
    the family terminal cost when supplied.
    """
    if depth < 1 or depth > 4:
        raise ValueError("signal depth must be between 1 and 4")
    horizon = cfg.t1 - t
    if horizon <= 0:
        raise ValueError("start time must precede the horizon")
    interval = horizon / depth
    if steps_per_interval is None:
        steps_per_interval = max(1, min(25, int(round(interval / cfg.dt))))
    dt_s = interval / steps_per_interval
    n_s = min(search_particles, cfg.particles)
    weights = np.full(n_s, 1.0 / n_s)
    x0 = sample_measure(mu0, n_s, (cfg.seed, "search-init")).points.copy()

    flagged = len(dictionary) ** depth > max_leaves
    width = beam_width
    if flagged and width is None:
        width = max(1, int(max_leaves ** (1.0 / depth)))

    frontier = [(0.0, (), x0)]
    noise_dim = cfg.noise_dim
    for stage in range(depth):
        nxt = []
        offset = stage * steps_per_interval
        increments = [
            gaussian_increments((cfg.seed, "search"), offset + s, (n_s, noise_dim))
            for s in range(steps_per_interval)
        ]
        for cost, path, state in frontier:
            for e_idx, entry in enumerate(dictionary.entries):
                new_state, inc = _advance_interval(state, weights, entry, family, dt_s, increments)
                nxt.append((cost + inc, path + (e_idx,), new_state))
        if width is not None and len(nxt) > width:
            nxt.sort(key=lambda item: (item[0], item[1]))
            nxt = nxt[:width]
            flagged = True
        frontier = nxt

    def leaf_total(item):
        cost, path, state = item
        if terminal_value is not None:
            n = state.shape[0]
            tail = terminal_value(cfg.t1, ParticleCloud(state, np.full(n, 1.0 / n)))
        else:
            tail = family.terminal_cost(family.moment_values_points(state, weights))
        return cost + float(tail)

    totals = [leaf_total(item) for item in frontier]
    best_idx = int(np.argmin(totals))
    best_path = frontier[best_idx][1]
    signal = ControlSignal.uniform([dictionary.entries[i] for i in best_path], t, cfg.t1)

    values = []
    for rep in range(reps):
        seed = int(generator_for(cfg.seed, "eval", rep).integers(2**62))
        sub = replace(cfg, t0=t, seed=seed)
        traj = simulate_flow(mu0, signal, family, sub)
        if terminal_value is not None:
            run = payoff(traj, family) - family.terminal_cost_of(traj.terminal_law())
            values.append(run + float(terminal_value(cfg.t1, traj.terminal_law())))
        else:
            values.append(payoff(traj, family))
    values = np.array(values)
    stderr = float(values.std(ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return ValueSearchResult(float(values.mean()), stderr, signal, float(totals[best_idx]), len(frontier), flagged)


# ---------------------------------------------------------------------------
# Dynamic-programming residual
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DPPReport:
    t: float
    tau: float
    mu0_id: str
    family_id: str
    lhs_value: float
    lhs_stderr: float
    rhs_value: float
    rhs_stderr: float
    residual: float
    error_bars: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance + self.error_bars


def dpp_residual(
    t: float,
    tau: float,
    mu0: TorusMeasure,
    family: CoefficientFamily,
    dictionary: ControlDictionary,
    cfg: SimulationConfig,
    depth: int = 4,
    continuation=None,
    reps: int = 8,
    tolerance: float = 5e-2,
    mu0_id: str = "mu0",
    search_particles: int = 400,
) -> DPPReport:
    """Compares the direct search value against the two-stage composition.

    The left side searches signals over the whole horizon; the right side
    searches over [t, tau] and closes with `continuation(tau, law)` (the
    family terminal cost when tau equals the horizon and no continuation is
    given).  PASS means the residual is within tolerance plus combined
    Monte-Carlo error bars.
    """
    if not (t < tau <= cfg.t1 + 1e-12):
        raise ValueError("need t < tau <= horizon")
    lhs = value_search(
        t, mu0, family, dictionary, cfg, depth=depth, reps=reps, search_particles=search_particles
    )
    span = cfg.t1 - t
    depth_prefix = max(1, int(round(depth * (tau - t) / span)))
    if abs(tau - cfg.t1) < 1e-12 and continuation is None:
        rhs = value_search(
            t, mu0, family, dictionary, cfg, depth=depth, reps=reps, search_particles=search_particles
        )
    else:
        if continuation is None:
            raise ValueError("a continuation evaluator is required for tau < horizon")
        cfg_pre = replace(cfg, t1=tau)
        rhs = value_search(
            t,
            mu0,
            family,
            dictionary,
            cfg_pre,
            depth=depth_prefix,
            reps=reps,
            terminal_value=continuation,
            search_particles=search_particles,
        )
    residual = abs(lhs.value - rhs.value)
    bars = 2.0 * (lhs.stderr + rhs.stderr)
    return DPPReport(
        t, tau, mu0_id, family.name, lhs.value, lhs.stderr, rhs.value, rhs.stderr, residual, bars, tolerance
    )


# ---------------------------------------------------------------------------
# Regularity probes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpaceLipschitzReport:
    ratios: np.ndarray  # (pairs kept, signals)
    skipped: int
    empirical_constant: float


def lipschitz_probe_space(
    family: CoefficientFamily,
    dictionary: ControlDictionary,
    cfg: SimulationConfig,
    pairs,
    lam: float | None = None,
    cutoff: int = 32,
) -> SpaceLipschitzReport:
    """Payoff difference over metric distance across measure pairs.

    Both members of a pair are simulated with the same seed (synchronous
    coupling); pairs with distance below ten truncation errors are skipped as
    ill-conditioned.
    """
    if len(pairs) < 1:
        raise ValueError("need at least one measure pair")
    lam = float(n_star(cfg.dim)) if lam is None else lam
    rows = []
    skipped = 0
    for mu, nu in pairs:
        dist = rho_lambda(mu, nu, lam, cutoff)
        if dist.value < 10.0 * dist.truncation_error:
            skipped += 1
            continue
        row = []
        for entry in dictionary.entries:
            signal = ControlSignal.constant(entry, cfg.t0, cfg.t1)
            j_mu = payoff(simulate_flow(mu, signal, family, cfg), family)
            j_nu = payoff(simulate_flow(nu, signal, family, cfg), family)
            row.append(abs(j_mu - j_nu) / dist.value)
        rows.append(row)
    ratios = np.array(rows) if rows else np.zeros((0, len(dictionary)))
    emp = float(np.max(ratios)) if ratios.size else 0.0
    return SpaceLipschitzReport(ratios, skipped, emp)


@dataclass(frozen=True)
class TimeLipschitzReport:
    gaps: tuple[float, ...]
    differences: tuple[float, ...]
    stderrs: tuple[float, ...]
    fitted_exponent: float
    noise_floor_pass: bool

    @property
    def passed(self) -> bool:
        return self.noise_floor_pass or self.fitted_exponent >= 0.45


def lipschitz_probe_time(
    family: CoefficientFamily,
    dictionary: ControlDictionary,
    cfg: SimulationConfig,
    mu0: TorusMeasure,
    t_base: float,
    gaps,
    depth: int = 2,
    reps: int = 8,
    search_particles: int = 400,
) -> TimeLipschitzReport:
    """Fits |v(t) - v(t+h)| against h in log-log.

    PASS when the fitted exponent reaches 0.45 or when every difference is
    below the combined Monte-Carlo noise floor (the bound is one-sided).
    """
    gaps = tuple(sorted(set(float(g) for g in gaps)))
    if len(gaps) < 4:
        raise ValueError("need at least 4 distinct gaps")
    base = value_search(t_base, mu0, family, dictionary, cfg, depth=depth, reps=reps, search_particles=search_particles)
    diffs, errs = [], []
    for h in gaps:
        shifted = value_search(
            t_base + h, mu0, family, dictionary, cfg, depth=depth, reps=reps, search_particles=search_particles
        )
        diffs.append(abs(base.value - shifted.value))
        errs.append(2.0 * (base.stderr + shifted.stderr))
    diffs_arr = np.array(diffs)
    errs_arr = np.array(errs)
    noise_floor = bool(np.all(diffs_arr <= errs_arr + 1e-12))
    usable = diffs_arr > errs_arr
    if noise_floor or usable.sum() < 2:
        slope = float("nan")
    else:
        slope = float(np.polyfit(np.log(np.array(gaps)[usable]), np.log(diffs_arr[usable]), 1)[0])
    return TimeLipschitzReport(gaps, tuple(diffs), tuple(errs), slope, noise_floor)
