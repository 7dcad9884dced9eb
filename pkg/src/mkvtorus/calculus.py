"""Calculus over measures: linear derivatives, generators, Hamiltonians.

Coefficient functions (drift/volatility/running cost) depend on the measure
only through finitely many moments mu(f_j), with each f_j a trigonometric
polynomial.  Controls are feedback maps from a finite dictionary.  The
generator and Hamiltonian act on trigonometric-polynomial test functions whose
second derivatives are certified by coefficient decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .fourier import HarmonicFunction, sobolev_weights
from .measures import ParticleCloud, TorusMeasure, fourier_table
from .metrics import MetricResult, SobolevWeight, n_star, rho_lambda

SECOND_ORDER_SCALES = {"full": 1.0, "half": 0.5}


class CertificateError(ValueError):
    """Raised when a test function lacks the required decay certificate."""


# ---------------------------------------------------------------------------
# Feedback controls and dictionaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeedbackControl:
    """Feedback map alpha: torus -> R^control_dim.

    Either a constant vector or one coefficient table per control component.
    """

    dim: int
    constant: np.ndarray | None = None
    tables: tuple[HarmonicFunction, ...] | None = None
    label: str = ""

    def __post_init__(self):
        if (self.constant is None) == (self.tables is None):
            raise ValueError("exactly one of constant/tables must be given")
        if self.constant is not None:
            c = np.atleast_1d(np.asarray(self.constant, dtype=float))
            c.setflags(write=False)
            object.__setattr__(self, "constant", c)

    @staticmethod
    def of_constant(value, label: str = "") -> "FeedbackControl":
        arr = np.atleast_1d(np.asarray(value, dtype=float))
        return FeedbackControl(dim=0, constant=arr, label=label or f"const:{','.join(f'{v:g}' for v in arr)}")

    @staticmethod
    def of_tables(tables: Sequence[HarmonicFunction], label: str = "") -> "FeedbackControl":
        tabs = tuple(tables)
        return FeedbackControl(dim=tabs[0].dim, tables=tabs, label=label or "fourier")

    @property
    def control_dim(self) -> int:
        return len(self.constant) if self.constant is not None else len(self.tables)

    @property
    def is_constant(self) -> bool:
        return self.constant is not None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.constant is not None:
            return np.broadcast_to(self.constant, (x.shape[0], len(self.constant)))
        return np.stack([tab.evaluate(x) for tab in self.tables], axis=-1)

    def cn_norm_bound(self, order: int) -> float:
        """Upper bound on the C^order norm (summed over control components)."""
        if self.constant is not None:
            return float(np.sum(np.abs(self.constant)))
        return float(sum(tab.cn_norm_bound(order) for tab in self.tables))


@dataclass(frozen=True)
class ControlDictionary:
    """Finite control set: declared constants plus optional feedback entries.

    Every constant control passed at construction is an entry, and each
    entry's C^{n_*} norm bound must not exceed the declared budget c0.
    """

    entries: tuple[FeedbackControl, ...]
    c0: float
    smoothness_order: int

    def __post_init__(self):
        if not self.entries:
            raise ValueError("dictionary must contain at least one control")
        for e in self.entries:
            bound = e.cn_norm_bound(self.smoothness_order)
            if bound > self.c0 * (1.0 + 1e-12):
                raise ValueError(
                    f"control {e.label!r} has C^{self.smoothness_order} bound {bound:.6g} > budget {self.c0:.6g}"
                )

    @staticmethod
    def of_constants(values, c0: float | None = None, dim: int = 1, extra=()) -> "ControlDictionary":
        entries = [FeedbackControl.of_constant(v) for v in values]
        entries.extend(extra)
        order = n_star(dim)
        if c0 is None:
            c0 = max(e.cn_norm_bound(order) for e in entries)
        return ControlDictionary(tuple(entries), float(c0), order)

    def __len__(self) -> int:
        return len(self.entries)

    def constant_values(self) -> np.ndarray:
        """Scalar values of the constant entries (1-d control only)."""
        return np.array([float(e.constant[0]) for e in self.entries if e.is_constant and e.control_dim == 1])


# ---------------------------------------------------------------------------
# Coefficient families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoefficientFamily:
    """Drift, volatility, running and terminal cost of a controlled system.

    Evaluators receive (x, moments, a) where `moments` is the vector of
    mu(f_j) for the family's moment functions, so the measure dependence is
    exactly through those functionals.  `smoothness_bound` is the declared
    budget on C^{n_*} norms and measure-Lipschitz constants.
    """

    name: str
    dim: int
    noise_dim: int
    control_dim: int
    moments: tuple[HarmonicFunction, ...]
    drift: Callable  # (x (n,d), moments (m,), a (n,ca)) -> (n,d)
    volatility: Callable  # (x, moments, a) -> (n,d,d')
    running_cost: Callable  # (x, moments, a) -> (n,)
    terminal_cost: Callable  # (moments,) -> float
    smoothness_bound: float = 10.0
    fast_moments: Callable | None = None  # optional (points, weights) -> moments shortcut

    def moment_values_points(self, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
        if not self.moments:
            return np.zeros(0)
        if self.fast_moments is not None:
            return self.fast_moments(points, weights)
        return np.array([float(np.sum(weights * f.evaluate(points))) for f in self.moments])

    def moment_values_by_table(self, points: np.ndarray, weights: np.ndarray) -> np.ndarray:
        """Moment vector through the coefficient tables (the fast path must agree)."""
        return np.array([float(np.sum(weights * f.evaluate(points))) for f in self.moments])

    def moment_values(self, mu: TorusMeasure) -> np.ndarray:
        pts, masses = mu.quadrature()
        return self.moment_values_points(pts, masses)

    def terminal_cost_of(self, mu: TorusMeasure) -> float:
        return float(self.terminal_cost(self.moment_values(mu)))


# ---------------------------------------------------------------------------
# Linear derivative of the squared metric, penalty gadgets
# ---------------------------------------------------------------------------


def linear_derivative_rho_sq(mu: TorusMeasure, nu: TorusMeasure, lam: float, cutoff: int) -> HarmonicFunction:
    """Derivative in mu of h(mu) = 0.5 * rho_lambda(mu, nu)^2.

    The coefficient at k is (1+|k|^2)^(-lam) F_k(mu - nu); its order-lam
    Sobolev norm reproduces the truncated metric exactly.
    """
    SobolevWeight(lam, mu.dim)
    eta = fourier_table(mu, cutoff) - fourier_table(nu, cutoff)
    w = sobolev_weights(eta.dim, eta.cutoff, -lam)
    return HarmonicFunction(eta.dim, eta.cutoff, w * eta.coeffs)


@dataclass(frozen=True)
class TestFunctionGadget:
    """Anchors of a doubling-of-variables penalty experiment."""

    mu: TorusMeasure
    nu: TorusMeasure
    t: float
    s: float
    epsilon: float
    lam: float
    cutoff: int

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")

    def penalty_metric(self) -> MetricResult:
        return rho_lambda(self.mu, self.nu, self.lam, self.cutoff)


def kappa_epsilon(gadget: TestFunctionGadget) -> HarmonicFunction:
    """Measure derivative of the penalty at its anchors: the derivative of the
    half squared metric scaled by 1/epsilon."""
    base = linear_derivative_rho_sq(gadget.mu, gadget.nu, gadget.lam, gadget.cutoff)
    return base.scaled(1.0 / gadget.epsilon)


def doubling_functional(u_eval, w_eval, gadget: TestFunctionGadget) -> float:
    """u(t, mu) - w(s, nu) - (rho^2 + (t-s)^2) / (2 epsilon) at the anchors."""
    rho = gadget.penalty_metric().value
    penalty = (rho * rho + (gadget.t - gadget.s) ** 2) / (2.0 * gadget.epsilon)
    return float(u_eval(gadget.t, gadget.mu) - w_eval(gadget.s, gadget.nu) - penalty)


# ---------------------------------------------------------------------------
# Generator and Hamiltonian
# ---------------------------------------------------------------------------


def require_c2(gamma: HarmonicFunction, max_tail: float = 1e-8) -> None:
    budget = gamma.c2_budget()
    if not np.isfinite(budget) or gamma.c2_tail > max_tail:
        raise CertificateError(
            f"test function lacks a usable C^2 certificate: block budget {budget:.3g}, declared tail {gamma.c2_tail:.3g}"
        )


def _generator_values(
    grad: np.ndarray,
    hess: np.ndarray,
    x: np.ndarray,
    moments: np.ndarray,
    alpha: FeedbackControl,
    coeffs: CoefficientFamily,
    scale: float,
) -> np.ndarray:
    a = alpha(x)
    b = coeffs.drift(x, moments, a)
    sig = coeffs.volatility(x, moments, a)
    first = np.sum(b * grad, axis=1)
    second = np.einsum("nil,njl,nij->n", sig, sig, hess)
    return first + scale * second


def generator_apply(
    gamma: HarmonicFunction,
    mu: TorusMeasure,
    alpha: FeedbackControl,
    coeffs: CoefficientFamily,
    x: np.ndarray,
    second_order: str = "full",
    max_c2_tail: float = 1e-8,
) -> np.ndarray:
    """Controlled generator applied to gamma, evaluated at points x.

    Computes b(x,mu,alpha(x)) . grad gamma(x) plus the volatility contraction
    against the Hessian.  `second_order` selects the scale of the diffusion
    term: "full" applies sigma sigma^T D^2 as is, "half" applies one half of
    it (the scaling consistent with the simulated dynamics).
    """
    require_c2(gamma, max_c2_tail)
    scale = SECOND_ORDER_SCALES[second_order]
    x = np.atleast_2d(x)
    moments = coeffs.moment_values(mu)
    return _generator_values(gamma.gradient(x), gamma.hessian(x), x, moments, alpha, coeffs, scale)


@dataclass(frozen=True)
class HamiltonianResult:
    value: float
    index: int
    control: FeedbackControl
    refined: bool = False


def _entry_objective(
    mu_pts, mu_masses, moments, grad, hess, gamma_ok, alpha, coeffs, scale
) -> float:
    a = alpha(mu_pts)
    ell = coeffs.running_cost(mu_pts, moments, a)
    gen = _generator_values(grad, hess, mu_pts, moments, alpha, coeffs, scale)
    return float(np.sum(mu_masses * (ell + gen)))


def hamiltonian(
    mu: TorusMeasure,
    gamma: HarmonicFunction,
    dictionary: ControlDictionary,
    coeffs: CoefficientFamily,
    second_order: str = "full",
    refine: int = 0,
    refine_points: int = 9,
    max_c2_tail: float = 1e-8,
) -> HamiltonianResult:
    """Minimum over the dictionary of mu(running cost + generator of gamma).

    Ties go to the lowest entry index.  With `refine` > 0 and a scalar
    constant winner, the constant is refined on a shrinking local grid
    (`refine` rounds of `refine_points` points between the neighbors).
    """
    require_c2(gamma, max_c2_tail)
    if len(dictionary) == 0:
        raise ValueError("empty control dictionary")
    scale = SECOND_ORDER_SCALES[second_order]
    pts, masses = mu.quadrature()
    moments = coeffs.moment_values_points(pts, masses)
    grad = gamma.gradient(pts)
    hess = gamma.hessian(pts)

    def objective(alpha: FeedbackControl) -> float:
        return _entry_objective(pts, masses, moments, grad, hess, gamma, alpha, coeffs, scale)

    values = [objective(e) for e in dictionary.entries]
    best = int(np.argmin(values))
    result = HamiltonianResult(values[best], best, dictionary.entries[best])
    winner = dictionary.entries[best]
    if refine <= 0 or not winner.is_constant or winner.control_dim != 1:
        return result
    consts = np.sort(dictionary.constant_values())
    a0 = float(winner.constant[0])
    i = int(np.searchsorted(consts, a0))
    lo = consts[max(i - 1, 0)]
    hi = consts[min(i + 1, len(consts) - 1)]
    best_a, best_v = a0, result.value
    for _ in range(refine):
        grid = np.linspace(lo, hi, refine_points)
        vals = [objective(FeedbackControl.of_constant(a)) for a in grid]
        j = int(np.argmin(vals))
        if vals[j] < best_v:
            best_v, best_a = vals[j], float(grid[j])
        step = (hi - lo) / (refine_points - 1)
        lo, hi = best_a - step, best_a + step
    return HamiltonianResult(best_v, best, FeedbackControl.of_constant(best_a), refined=True)


@dataclass(frozen=True)
class HamiltonianGap:
    """Per-term decomposition of |H(mu, kappa) - H(nu, kappa)|.

    The difference of the two Hamiltonians is bounded by the three suprema:
    a cost term, a pairing of the measure difference against the generator,
    and a coefficient-shift term.
    """

    h_mu: float
    h_nu: float
    cost_sup: float
    pairing_sup: float
    shift_sup: float

    @property
    def difference(self) -> float:
        return abs(self.h_mu - self.h_nu)

    @property
    def bound(self) -> float:
        return self.cost_sup + self.pairing_sup + self.shift_sup


def hamiltonian_difference_decomposition(
    mu: TorusMeasure,
    nu: TorusMeasure,
    kappa: HarmonicFunction,
    dictionary: ControlDictionary,
    coeffs: CoefficientFamily,
    second_order: str = "full",
) -> HamiltonianGap:
    require_c2(kappa)
    scale = SECOND_ORDER_SCALES[second_order]
    mu_pts, mu_m = mu.quadrature()
    nu_pts, nu_m = nu.quadrature()
    mom_mu = coeffs.moment_values_points(mu_pts, mu_m)
    mom_nu = coeffs.moment_values_points(nu_pts, nu_m)
    grad_mu, hess_mu = kappa.gradient(mu_pts), kappa.hessian(mu_pts)
    grad_nu, hess_nu = kappa.gradient(nu_pts), kappa.hessian(nu_pts)

    h_mu = np.inf
    h_nu = np.inf
    cost_sup = pairing_sup = shift_sup = 0.0
    for alpha in dictionary.entries:
        a_mu, a_nu = alpha(mu_pts), alpha(nu_pts)
        ell_mu = float(np.sum(mu_m * coeffs.running_cost(mu_pts, mom_mu, a_mu)))
        ell_nu = float(np.sum(nu_m * coeffs.running_cost(nu_pts, mom_nu, a_nu)))
        gen_mu_at_mu = _generator_values(grad_mu, hess_mu, mu_pts, mom_mu, alpha, coeffs, scale)
        gen_mu_at_nu = _generator_values(grad_nu, hess_nu, nu_pts, mom_mu, alpha, coeffs, scale)
        gen_nu_at_nu = _generator_values(grad_nu, hess_nu, nu_pts, mom_nu, alpha, coeffs, scale)
        h_mu = min(h_mu, ell_mu + float(np.sum(mu_m * gen_mu_at_mu)))
        h_nu = min(h_nu, ell_nu + float(np.sum(nu_m * gen_nu_at_nu)))
        # running costs evaluated in each measure's own moments
        cost_sup = max(cost_sup, abs(ell_mu - ell_nu))
        # (mu - nu) paired against the generator frozen at mu's moments
        pairing = float(np.sum(mu_m * gen_mu_at_mu) - np.sum(nu_m * gen_mu_at_nu))
        pairing_sup = max(pairing_sup, abs(pairing))
        # moment shift of the generator, integrated against nu
        shift = float(np.sum(nu_m * (gen_mu_at_nu - gen_nu_at_nu)))
        shift_sup = max(shift_sup, abs(shift))
    return HamiltonianGap(h_mu, h_nu, cost_sup, pairing_sup, shift_sup)


# ---------------------------------------------------------------------------
# Validation of declared budgets
# ---------------------------------------------------------------------------

_FD_STENCILS = {
    0: (np.array([1.0]), np.array([0])),
    1: (np.array([-0.5, 0.0, 0.5]), np.array([-1, 0, 1])),
    2: (np.array([1.0, -2.0, 1.0]), np.array([-1, 0, 1])),
    3: (np.array([-0.5, 1.0, 0.0, -1.0, 0.5]), np.array([-2, -1, 0, 1, 2])),
    4: (np.array([1.0, -4.0, 6.0, -4.0, 1.0]), np.array([-2, -1, 0, 1, 2])),
}


def _sampled_cn_norm(func, dim: int, order: int, n_grid: int = 64, h: float = 1e-2) -> float:
    """Sum over derivative orders of sampled sup |d^j f| along each axis."""
    from .fourier import grid_midpoints

    base = grid_midpoints((n_grid,) * dim)
    total = float(np.max(np.abs(func(base))))
    for j in range(1, order + 1):
        coef, offs = _FD_STENCILS[j]
        per_axis = 0.0
        for axis in range(dim):
            acc = np.zeros(base.shape[0])
            for c, o in zip(coef, offs):
                shifted = base.copy()
                shifted[:, axis] += o * h
                acc += c * np.asarray(func(shifted), dtype=float)
            per_axis = max(per_axis, float(np.max(np.abs(acc / h**j))))
        total += per_axis
    return total


@dataclass(frozen=True)
class FamilyValidation:
    smoothness_ok: bool
    lipschitz_ok: bool
    worst_cn: float
    worst_lipschitz_ratio: float


def validate_family(
    family: CoefficientFamily,
    dictionary: ControlDictionary,
    probe_measures: Sequence[TorusMeasure],
    lam: float | None = None,
    cutoff: int = 32,
    slack: float = 1.05,
) -> FamilyValidation:
    """Sampled check of the declared smoothness and measure-Lipschitz budgets.

    Derivatives of x -> coefficient(x, mu, alpha(x)) are sampled on a grid up
    to order n_*; the measure-Lipschitz quotient uses the certified metric
    surrogate.  Pairs closer than ten truncation errors are skipped.
    """
    d = family.dim
    order = n_star(d)
    lam = float(order) if lam is None else lam
    worst_cn = 0.0
    for mu in probe_measures:
        moments = family.moment_values(mu)
        for alpha in dictionary.entries:

            def scalarize(h):
                return lambda x: np.asarray(h(np.atleast_2d(x), moments, alpha(np.atleast_2d(x))), dtype=float).reshape(x.shape[0], -1)[:, 0]

            for h in (family.drift, family.running_cost):
                worst_cn = max(worst_cn, _sampled_cn_norm(scalarize(h), d, order))
            worst_cn = max(
                worst_cn,
                _sampled_cn_norm(
                    lambda x: family.volatility(np.atleast_2d(x), moments, alpha(np.atleast_2d(x))).reshape(x.shape[0], -1)[:, 0],
                    d,
                    order,
                ),
            )
    worst_ratio = 0.0
    probe_x = probe_measures[0].quadrature()[0][:8]
    for i in range(len(probe_measures)):
        for j in range(i + 1, len(probe_measures)):
            mu, nu = probe_measures[i], probe_measures[j]
            dist = rho_lambda(mu, nu, lam, cutoff)
            if dist.value < 10.0 * dist.truncation_error:
                continue
            mom_mu, mom_nu = family.moment_values(mu), family.moment_values(nu)
            for alpha in dictionary.entries:
                a = alpha(probe_x)
                for h in (family.drift, family.running_cost):
                    gap = float(np.max(np.abs(np.asarray(h(probe_x, mom_mu, a)) - np.asarray(h(probe_x, mom_nu, a)))))
                    worst_ratio = max(worst_ratio, gap / dist.upper)
                gap_t = abs(family.terminal_cost(mom_mu) - family.terminal_cost(mom_nu))
                worst_ratio = max(worst_ratio, gap_t / dist.upper)
    return FamilyValidation(
        smoothness_ok=worst_cn <= slack * family.smoothness_bound,
        lipschitz_ok=worst_ratio <= slack * family.smoothness_bound,
        worst_cn=worst_cn,
        worst_lipschitz_ratio=worst_ratio,
    )
