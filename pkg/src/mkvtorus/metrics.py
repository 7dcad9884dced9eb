"""Sobolev norms and metrics between probability measures on the torus.

The central object is the negative-order weighted spectral distance

    rho_lambda(mu, nu) = ( sum_k (1+|k|^2)^(-lambda) |F_k(mu-nu)|^2 )^(1/2),

which is the dual metric of the order-lambda Sobolev unit ball whenever
2*lambda > d.  Every computed value ships with a certified truncation error so
callers get an interval containing the true metric, not a bare point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fourier import (
    FourierTable,
    HarmonicFunction,
    basis_scale,
    pair_measure_function,
    sobolev_weights,
    tail_weight_sum_bound,
)
from .measures import ParticleCloud, TorusMeasure, fourier_table


def n_star(d: int) -> int:
    """Smoothness order 3 + floor(d/2); this order embeds into C^2."""
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    return 3 + d // 2


@dataclass(frozen=True)
class SobolevWeight:
    """Validated order of the dual Sobolev norm: requires 2*lam > d."""

    lam: float
    dim: int

    def __post_init__(self):
        if self.lam < 1.0:
            raise ValueError(f"order must be >= 1, got {self.lam}")
        if 2.0 * self.lam <= self.dim:
            raise ValueError(
                f"dual norm of order {self.lam} is not defined in dimension {self.dim}: need 2*lam > d"
            )


@dataclass(frozen=True)
class MetricResult:
    """Truncated value plus a certified truncation error.

    When `certified` is set, the untruncated quantity lies in
    [max(value - truncation_error, 0), value + truncation_error].
    """

    value: float
    truncation_error: float
    cutoff: int
    certified: bool = True

    @property
    def lower(self) -> float:
        return max(self.value - self.truncation_error, 0.0)

    @property
    def upper(self) -> float:
        return self.value + self.truncation_error


@dataclass(frozen=True)
class Interval:
    lower: float
    upper: float

    @property
    def width(self) -> float:
        return self.upper - self.lower


def sobolev_norm(f: HarmonicFunction, lam: float, tail_sq_bound: float | None = None) -> MetricResult:
    """Truncated ||f||_lam.  Without a caller-supplied decay certificate the
    tail is unknown and the result is marked uncertified."""
    if lam < 1.0:
        raise ValueError(f"order must be >= 1, got {lam}")
    value_sq = f.sobolev_norm_sq(lam)
    if tail_sq_bound is None:
        return MetricResult(float(np.sqrt(value_sq)), 0.0, f.cutoff, certified=False)
    return MetricResult(float(np.sqrt(value_sq)), float(np.sqrt(tail_sq_bound)), f.cutoff, certified=True)


def rho_truncation_error(d: int, cutoff: int, lam: float) -> float:
    """Certified truncation error of rho_lambda at the given cutoff."""
    return 2.0 * basis_scale(d) * float(np.sqrt(tail_weight_sum_bound(d, cutoff, lam)))


def rho_lambda_from_table(eta: FourierTable, lam: float) -> MetricResult:
    """rho_lambda where eta is the moment table of mu - nu."""
    SobolevWeight(lam, eta.dim)
    w = sobolev_weights(eta.dim, eta.cutoff, -lam)
    value = float(np.sqrt(np.sum(w * np.abs(eta.coeffs) ** 2)))
    return MetricResult(value, rho_truncation_error(eta.dim, eta.cutoff, lam), eta.cutoff)


def rho_lambda(mu: TorusMeasure, nu: TorusMeasure, lam: float, cutoff: int) -> MetricResult:
    """Certified spectral distance between two probability measures."""
    if mu.dim != nu.dim:
        raise ValueError("measures live in different dimensions")
    eta = fourier_table(mu, cutoff) - fourier_table(nu, cutoff)
    return rho_lambda_from_table(eta, lam)


@dataclass(frozen=True)
class DualCertificate:
    """Near-maximizer of eta(psi) over the order-lam unit ball.

    `ratio` is eta(psi) / ||psi||_lam, which saturates the truncated metric;
    a zero difference is returned as the zero function with `degenerate` set.
    """

    psi: HarmonicFunction
    degenerate: bool
    pairing: float
    psi_norm: float

    @property
    def ratio(self) -> float:
        return 0.0 if self.degenerate else self.pairing / self.psi_norm


def dual_maximizer(eta: FourierTable, lam: float) -> DualCertificate:
    """Witness function with coefficients F_k(psi) = (1+|k|^2)^(-lam) F_k(eta)."""
    SobolevWeight(lam, eta.dim)
    w = sobolev_weights(eta.dim, eta.cutoff, -lam)
    psi = HarmonicFunction(eta.dim, eta.cutoff, w * eta.coeffs)
    norm = float(np.sqrt(psi.sobolev_norm_sq(lam)))
    if norm == 0.0:
        return DualCertificate(psi, True, 0.0, 0.0)
    return DualCertificate(psi, False, pair_measure_function(eta, psi), norm)


def w1_circle(mu: ParticleCloud, nu: ParticleCloud) -> float:
    """Exact Wasserstein-1 distance between clouds on the circle (d=1 only).

    The distance equals min over level shifts t of the integral of
    |CDF_mu - CDF_nu - t|; the optimal shift is a length-weighted median of the
    CDF difference, so the minimization is exact.
    """
    if not isinstance(mu, ParticleCloud) or not isinstance(nu, ParticleCloud):
        raise TypeError("w1_circle expects particle clouds")
    if mu.dim != 1 or nu.dim != 1:
        raise ValueError("w1_circle supports d=1 only")
    xs = np.concatenate([mu.points[:, 0], nu.points[:, 0]])
    signed = np.concatenate([mu.weights, -nu.weights])
    order = np.argsort(xs, kind="stable")
    xs, signed = xs[order], signed[order]
    # collapse duplicate support points
    uniq, inv = np.unique(xs, return_inverse=True)
    mass = np.zeros_like(uniq)
    np.add.at(mass, inv, signed)
    # CDF difference is constant on each arc [s_j, s_{j+1})
    diff = np.cumsum(mass)
    lengths = np.diff(np.append(uniq, uniq[0] + 2.0 * np.pi))
    shift = _weighted_median(diff, lengths)
    return float(np.sum(np.abs(diff - shift) * lengths))


def _weighted_median(values: np.ndarray, weights: np.ndarray) -> float:
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cum = np.cumsum(w)
    return float(v[np.searchsorted(cum, 0.5 * cum[-1])])


def embedding_constant(m: int, d: int) -> float:
    """Constant c with W-type dual metrics <= c * rho_m: sqrt(2^m (1 + d^m (2pi)^d))."""
    if m < 1 or d < 1:
        raise ValueError("need m >= 1 and d >= 1")
    return float(np.sqrt(2.0**m * (1.0 + d**m * (2.0 * np.pi) ** d)))


def tail_constant_c(d: int, cutoff: int | None = None) -> Interval:
    """Certified interval for sum_k (1+|k|^2)^(2 - n_star(d)).

    Partial sum over |k|_inf <= cutoff plus the analytic tail bound.
    """
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    if cutoff is None:
        cutoff = {1: 4096, 2: 256, 3: 64}.get(d, 64)
    lam = float(n_star(d) - 2)
    w = sobolev_weights(d, cutoff, -lam)
    partial = float(np.sum(w))
    tail = tail_weight_sum_bound(d, cutoff, lam)
    return Interval(partial, partial + tail)
