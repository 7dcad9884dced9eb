"""Built-in coefficient families for the controlled dynamics.

All families follow the moment-functional pattern: the measure enters the
coefficients only through mu(cos) and mu(sin) (or not at all), so the declared
regularity budgets hold by construction.
"""

from __future__ import annotations

import numpy as np

from .calculus import CoefficientFamily
from .fourier import TWO_PI, HarmonicFunction


def cosine_table(cutoff: int = 1, freq: int = 1) -> HarmonicFunction:
    """cos(freq * x) on the circle as a coefficient table."""
    amp = np.sqrt(TWO_PI) / 2.0
    tab = HarmonicFunction.zero(1, cutoff)
    coeffs = tab.coeffs.copy()
    coeffs[cutoff + freq] = amp
    coeffs[cutoff - freq] = amp
    return HarmonicFunction(1, cutoff, coeffs)


def sine_table(cutoff: int = 1, freq: int = 1) -> HarmonicFunction:
    """sin(freq * x) on the circle as a coefficient table."""
    amp = np.sqrt(TWO_PI) / 2.0
    tab = HarmonicFunction.zero(1, cutoff)
    coeffs = tab.coeffs.copy()
    coeffs[cutoff + freq] = -1j * amp
    coeffs[cutoff - freq] = 1j * amp
    return HarmonicFunction(1, cutoff, coeffs)


def circular_mean_of_moments(moments: np.ndarray) -> float:
    """Angle of the first trigonometric moment, in (-pi, pi].

    Equals the representative-interval mean for measures symmetric about
    their center, moves at exactly the drift rate under constant-in-space
    controls, and is insensitive to centered diffusion; degenerate first
    moments (e.g. the uniform measure) return 0.
    """
    return float(np.arctan2(moments[1], moments[0]))


def _trig_moments(points: np.ndarray, weights: np.ndarray) -> np.ndarray:
    x = points[:, 0]
    return np.array([float(np.sum(weights * np.cos(x))), float(np.sum(weights * np.sin(x)))])


def one_plus_cos(y):
    return 1.0 + np.cos(y)


def eikonal_family(L=one_plus_cos, sigma: float = 1.0, name: str = "eikonal") -> CoefficientFamily:
    """Controlled drift on the circle with quadratic control cost.

    b = a, constant volatility, running cost a^2/2 + L(mean), zero terminal
    cost.  L acts on the circular mean of the measure.
    """

    def drift(x, moments, a):
        return a[:, :1]

    def volatility(x, moments, a):
        return np.full((x.shape[0], 1, 1), float(sigma))

    def running_cost(x, moments, a):
        m = circular_mean_of_moments(moments)
        return 0.5 * a[:, 0] ** 2 + float(L(m))

    def terminal_cost(moments):
        return 0.0

    return CoefficientFamily(
        name=name,
        dim=1,
        noise_dim=1,
        control_dim=1,
        moments=(cosine_table(), sine_table()),
        drift=drift,
        volatility=volatility,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        smoothness_bound=10.0,
        fast_moments=_trig_moments,
    )


def kuramoto_family(kappa: float = 1.0, sigma: float = 1.0) -> CoefficientFamily:
    """Synchronization cost family on the circle.

    b = a, constant volatility, running cost
    a^2/2 + kappa * (1 - mu(cos)^2 - mu(sin)^2), zero terminal cost.
    """

    def drift(x, moments, a):
        return a[:, :1]

    def volatility(x, moments, a):
        return np.full((x.shape[0], 1, 1), float(sigma))

    def running_cost(x, moments, a):
        order_sq = moments[0] ** 2 + moments[1] ** 2
        return 0.5 * a[:, 0] ** 2 + kappa * (1.0 - order_sq)

    def terminal_cost(moments):
        return 0.0

    return CoefficientFamily(
        name="kuramoto",
        dim=1,
        noise_dim=1,
        control_dim=1,
        moments=(cosine_table(), sine_table()),
        drift=drift,
        volatility=volatility,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        smoothness_bound=10.0 + 2.0 * abs(kappa),
        fast_moments=_trig_moments,
    )


def frozen_family(running: HarmonicFunction | float = 0.0, dim: int = 1, name: str | None = None) -> CoefficientFamily:
    """Motionless dynamics (b = 0, sigma = 0) with a state-dependent or
    constant running cost and zero terminal cost."""

    if isinstance(running, HarmonicFunction):
        cost_at = running.evaluate
        label = name or "frozen-table"
    else:
        const = float(running)

        def cost_at(x):
            return np.full(x.shape[0], const)

        label = name or f"frozen:{const:g}"

    def drift(x, moments, a):
        return np.zeros((x.shape[0], dim))

    def volatility(x, moments, a):
        return np.zeros((x.shape[0], dim, 1))

    def running_cost(x, moments, a):
        return np.asarray(cost_at(x), dtype=float)

    def terminal_cost(moments):
        return 0.0

    return CoefficientFamily(
        name=label,
        dim=dim,
        noise_dim=1,
        control_dim=1,
        moments=(),
        drift=drift,
        volatility=volatility,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        smoothness_bound=10.0,
    )


def transport_family(sigma: float = 0.0, dim: int = 1) -> CoefficientFamily:
    """Pure controlled transport: b = a, optional constant noise, zero costs."""

    def drift(x, moments, a):
        return a[:, :dim]

    def volatility(x, moments, a):
        return np.broadcast_to(float(sigma) * np.eye(dim, 1), (x.shape[0], dim, 1)).copy()

    def running_cost(x, moments, a):
        return np.zeros(x.shape[0])

    def terminal_cost(moments):
        return 0.0

    return CoefficientFamily(
        name="transport",
        dim=dim,
        noise_dim=1,
        control_dim=dim,
        moments=(),
        drift=drift,
        volatility=volatility,
        running_cost=running_cost,
        terminal_cost=terminal_cost,
        smoothness_bound=10.0,
    )


def family_from_spec(name: str, **params) -> CoefficientFamily:
    """Construct a built-in family by name with keyword parameters."""
    if name == "eikonal":
        return eikonal_family(sigma=float(params.get("sigma", 1.0)))
    if name == "kuramoto":
        return kuramoto_family(kappa=float(params.get("kappa", 1.0)), sigma=float(params.get("sigma", 1.0)))
    if name == "frozen":
        return frozen_family(running=float(params.get("running", 0.0)))
    if name == "frozen-cos":
        return frozen_family(running=cosine_table(), name="frozen-cos")
    if name == "transport":
        return transport_family(sigma=float(params.get("sigma", 0.0)))
    raise KeyError(f"unknown coefficient family {name!r}")
