"""Truncated Fourier representations on the d-dimensional torus.

Everything here works with the orthonormal basis e_k(x) = (2pi)^(-d/2) exp(i k.x),
k in Z^d.  A function is stored by its coefficients c_k (f = sum c_k e_k) on the
cube |k|_inf <= K; a measure is stored by its moments F_k(mu) = mu(e_k^*).  Real
objects satisfy the conjugate symmetry c_{-k} = conj(c_k), which we maintain
exactly by mirroring rather than recomputation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

TWO_PI = 2.0 * np.pi

# Desk scale: grids and tail bounds below are only implemented for d <= 3.
MAX_DIM = 3


def basis_scale(d: int) -> float:
    """Normalization (2pi)^(-d/2) of the basis elements."""
    return TWO_PI ** (-d / 2.0)


def k_range(cutoff: int) -> np.ndarray:
    """Integer frequencies -K..K along one axis."""
    return np.arange(-cutoff, cutoff + 1)


def k_lattice(d: int, cutoff: int) -> np.ndarray:
    """All frequency vectors with |k|_inf <= cutoff, shape (2K+1)^d x d.

    Row order is row-major over axes, so the flat index of k is
    sum_j (k_j + K) * (2K+1)^(d-1-j).
    """
    axes = [k_range(cutoff)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def k_norm_sq(d: int, cutoff: int) -> np.ndarray:
    """|k|^2 (Euclidean) on the lattice, shape (2K+1,)*d."""
    ks = k_lattice(d, cutoff)
    return (ks * ks).sum(axis=1).reshape((2 * cutoff + 1,) * d).astype(float)


def sobolev_weights(d: int, cutoff: int, lam: float) -> np.ndarray:
    """(1 + |k|^2)^lam on the lattice."""
    return (1.0 + k_norm_sq(d, cutoff)) ** lam


def _axis_phases(x: np.ndarray, cutoff: int, sign: int) -> np.ndarray:
    """exp(sign * i * k * x) for k = -K..K, per point and axis.

    Returns shape (n, d, 2K+1).  Negative frequencies are exact conjugates of
    the positive ones so that symmetry properties hold bit-for-bit.
    """
    pos = np.exp(sign * 1j * np.einsum("nd,k->ndk", x, np.arange(1, cutoff + 1)))
    n, d = x.shape
    out = np.empty((n, d, 2 * cutoff + 1), dtype=complex)
    out[:, :, cutoff] = 1.0
    out[:, :, cutoff + 1 :] = pos
    out[:, :, :cutoff] = np.conj(pos[:, :, ::-1])
    return out


def _contract(phases: np.ndarray, weights: np.ndarray | None) -> np.ndarray:
    """Sum over points of w_n * prod_axis phases[n, axis, k_axis].

    Returns the full (2K+1,)*d tensor.  The reduction is a single np.sum per
    output (pairwise summation), so results do not depend on thread count.
    """
    n, d, m = phases.shape
    prod = phases[:, 0, :]
    for axis in range(1, d):
        prod = prod[..., :, None] * phases[:, axis, :].reshape((n,) + (1,) * axis + (m,))
    if weights is not None:
        prod = prod * weights.reshape((n,) + (1,) * d)
    return prod.sum(axis=0)


@dataclass(frozen=True)
class FourierTable:
    """Moments F_k(mu) = mu(e_k^*) of a finite measure for |k|_inf <= cutoff.

    For probability measures |F_k| <= (2pi)^(-d/2) (total mass one against the
    unit-modulus basis), and real measures obey F_{-k} = conj(F_k).
    """

    dim: int
    cutoff: int
    coeffs: np.ndarray  # complex, shape (2*cutoff+1,)*dim

    def __post_init__(self):
        if self.cutoff < 1:
            raise ValueError(f"cutoff must be >= 1, got {self.cutoff}")
        if not 1 <= self.dim <= MAX_DIM:
            raise ValueError(f"dimension must be in 1..{MAX_DIM}, got {self.dim}")
        expected = (2 * self.cutoff + 1,) * self.dim
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient array has shape {self.coeffs.shape}, expected {expected}")

    def coefficient(self, k) -> complex:
        """F_k for a single frequency vector k."""
        idx = tuple(int(ki) + self.cutoff for ki in np.atleast_1d(k))
        if len(idx) != self.dim or any(i < 0 or i > 2 * self.cutoff for i in idx):
            raise KeyError(f"frequency {k} outside |k|_inf <= {self.cutoff}")
        return complex(self.coeffs[idx])

    def conjugate_symmetry_defect(self) -> float:
        flipped = np.conj(self.coeffs[(slice(None, None, -1),) * self.dim])
        return float(np.max(np.abs(self.coeffs - flipped)))

    def max_modulus(self) -> float:
        return float(np.max(np.abs(self.coeffs)))

    def tail_bound(self, lam: float) -> float:
        """Certified bound on sum_{|k|_inf > K} (1+|k|^2)^(-lam) |F_k|^2.

        Uses |F_k| <= 2 * (2pi)^(-d/2), valid for differences of two
        probability measures (and a fortiori for a single one).
        """
        amp = 2.0 * basis_scale(self.dim)
        return amp * amp * tail_weight_sum_bound(self.dim, self.cutoff, lam)

    def __sub__(self, other: "FourierTable") -> "FourierTable":
        if (self.dim, self.cutoff) != (other.dim, other.cutoff):
            raise ValueError("tables must share dimension and cutoff")
        return FourierTable(self.dim, self.cutoff, self.coeffs - other.coeffs)


def measure_table(points: np.ndarray, weights: np.ndarray, cutoff: int) -> FourierTable:
    """FourierTable of the atomic measure sum_i w_i delta_{x_i} (exact sums)."""
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    phases = _axis_phases(points, cutoff, sign=-1)
    coeffs = basis_scale(points.shape[1]) * _contract(phases, weights)
    return FourierTable(points.shape[1], cutoff, coeffs)


@dataclass(frozen=True)
class HarmonicFunction:
    """Trigonometric polynomial f = sum_{|k|_inf <= K} c_k e_k.

    `c2_tail` is a declared bound on the discarded part of
    sum (1+|k|^2) |c_k|, used to certify second derivatives; exact tables
    (the only ones produced internally) carry 0.
    """

    dim: int
    cutoff: int
    coeffs: np.ndarray
    c2_tail: float = 0.0

    def __post_init__(self):
        expected = (2 * self.cutoff + 1,) * self.dim
        if self.coeffs.shape != expected:
            raise ValueError(f"coefficient array has shape {self.coeffs.shape}, expected {expected}")

    @staticmethod
    def zero(dim: int, cutoff: int) -> "HarmonicFunction":
        return HarmonicFunction(dim, cutoff, np.zeros((2 * cutoff + 1,) * dim, dtype=complex))

    @staticmethod
    def from_single(dim: int, cutoff: int, k, value: complex = 1.0) -> "HarmonicFunction":
        coeffs = np.zeros((2 * cutoff + 1,) * dim, dtype=complex)
        idx = tuple(int(ki) + cutoff for ki in np.atleast_1d(k))
        coeffs[idx] = value
        return HarmonicFunction(dim, cutoff, coeffs)

    def is_real(self, tol: float = 1e-12) -> bool:
        flipped = np.conj(self.coeffs[(slice(None, None, -1),) * self.dim])
        return bool(np.max(np.abs(self.coeffs - flipped)) <= tol)

    def coefficient(self, k) -> complex:
        idx = tuple(int(ki) + self.cutoff for ki in np.atleast_1d(k))
        return complex(self.coeffs[idx])

    def _k_components(self) -> list[np.ndarray]:
        shape = (2 * self.cutoff + 1,) * self.dim
        return [
            k_range(self.cutoff).reshape((1,) * axis + (-1,) + (1,) * (self.dim - 1 - axis)) * np.ones(shape)
            for axis in range(self.dim)
        ]

    def evaluate(self, x: np.ndarray) -> np.ndarray:
        """f at points x of shape (n, d); returns real part (n,)."""
        x = np.atleast_2d(x)
        if self.dim == 1:
            z = np.exp(1j * x[:, 0])
            K, c = self.cutoff, self.coeffs
            acc = np.full(x.shape[0], complex(c[K]))
            zk = np.ones_like(z)
            for k in range(1, K + 1):
                zk = zk * z
                acc = acc + c[K + k] * zk + c[K - k] * np.conj(zk)
            return basis_scale(1) * np.real(acc)
        phases = _axis_phases(x, self.cutoff, sign=+1)
        n, d, m = phases.shape
        prod = phases[:, 0, :]
        for axis in range(1, d):
            prod = prod[..., :, None] * phases[:, axis, :].reshape((n,) + (1,) * axis + (m,))
        vals = (prod * self.coeffs).reshape(n, -1).sum(axis=1)
        return basis_scale(self.dim) * np.real(vals)

    def derivative(self, axis: int) -> "HarmonicFunction":
        """Coefficient table of d/dx_axis f (multiplication by i*k_axis)."""
        kc = self._k_components()[axis]
        return HarmonicFunction(self.dim, self.cutoff, self.coeffs * (1j * kc), self.c2_tail)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        return np.stack([self.derivative(a).evaluate(x) for a in range(self.dim)], axis=-1)

    def hessian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.empty((x.shape[0], self.dim, self.dim))
        for a in range(self.dim):
            da = self.derivative(a)
            for b in range(a, self.dim):
                vals = da.derivative(b).evaluate(x)
                out[:, a, b] = vals
                out[:, b, a] = vals
        return out

    def sobolev_norm_sq(self, lam: float) -> float:
        w = sobolev_weights(self.dim, self.cutoff, lam)
        return float(np.sum(w * np.abs(self.coeffs) ** 2))

    def c2_budget(self) -> float:
        """sum (1+|k|^2) |c_k| over the stored block plus the declared tail."""
        w = sobolev_weights(self.dim, self.cutoff, 1.0)
        return float(np.sum(w * np.abs(self.coeffs))) + self.c2_tail

    def cn_norm_bound(self, order: int) -> float:
        """Upper bound on the C^order norm: sum over multi-indices |beta| <= order
        of sup |d^beta f|, each bounded coefficient-wise."""
        ks = np.abs(k_lattice(self.dim, self.cutoff)).astype(float)
        amps = np.abs(self.coeffs).ravel() * basis_scale(self.dim)
        total = 0.0
        for beta in _multi_indices(self.dim, order):
            kpow = np.prod(ks ** np.asarray(beta, dtype=float), axis=1)
            total += float(np.sum(amps * kpow))
        return total

    def __add__(self, other: "HarmonicFunction") -> "HarmonicFunction":
        if (self.dim, self.cutoff) != (other.dim, other.cutoff):
            raise ValueError("tables must share dimension and cutoff")
        return HarmonicFunction(self.dim, self.cutoff, self.coeffs + other.coeffs, self.c2_tail + other.c2_tail)

    def scaled(self, factor: float) -> "HarmonicFunction":
        return HarmonicFunction(self.dim, self.cutoff, self.coeffs * factor, abs(factor) * self.c2_tail)


def _multi_indices(d: int, order: int):
    """All derivative multi-indices with |beta| <= order."""
    if d == 1:
        return [(j,) for j in range(order + 1)]
    out = []
    for j in range(order + 1):
        for rest in _multi_indices(d - 1, order - j):
            out.append((j,) + rest)
    return out


def pair_measure_function(eta: FourierTable, psi: HarmonicFunction) -> float:
    """Integral eta(psi) = sum_k F_k(psi) * conj(F_k(eta)) for truncated tables."""
    if (eta.dim, eta.cutoff) != (psi.dim, psi.cutoff):
        raise ValueError("tables must share dimension and cutoff")
    return float(np.real(np.sum(psi.coeffs * np.conj(eta.coeffs))))


def harmonic_from_grid(values: np.ndarray, cutoff: int) -> HarmonicFunction:
    """Coefficient table of a grid function sampled on the uniform midpoint grid.

    `values` holds f at cell midpoints of [0,2pi)^d; coefficients come from the
    midpoint quadrature of the projection integrals.
    """
    values = np.asarray(values, dtype=float)
    d = values.ndim
    shape = values.shape
    cell = TWO_PI ** d / float(np.prod(shape))
    centers = grid_midpoints(shape)
    phases = _axis_phases(centers, cutoff, sign=-1)
    coeffs = basis_scale(d) * cell * _contract(phases, values.ravel())
    return HarmonicFunction(d, cutoff, coeffs)


def grid_midpoints(shape: tuple[int, ...]) -> np.ndarray:
    """Cell midpoints of the uniform grid on [0,2pi)^d, shape (prod(shape), d)."""
    axes = [(np.arange(n) + 0.5) * (TWO_PI / n) for n in shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


# ---------------------------------------------------------------------------
# Plain-text serialization of coefficient tables: header "harmonic v1 d=<d>
# K=<K>", then one line per stored frequency "k1 [k2 k3] re im".
# ---------------------------------------------------------------------------


class HarmonicFormatError(ValueError):
    pass


def dumps_harmonic(f: HarmonicFunction) -> str:
    lines = [f"harmonic v1 d={f.dim} K={f.cutoff}"]
    for k in k_lattice(f.dim, f.cutoff):
        c = f.coefficient(k)
        if c != 0:
            ks = " ".join(str(int(v)) for v in k)
            lines.append(f"{ks} {c.real:.17g} {c.imag:.17g}")
    return "\n".join(lines) + "\n"


def loads_harmonic(text: str) -> HarmonicFunction:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise HarmonicFormatError("empty coefficient file")
    head = lines[0].replace(",", " ").split()
    if len(head) != 4 or head[0] != "harmonic" or head[1] != "v1":
        raise HarmonicFormatError(f"bad header {lines[0]!r}")
    try:
        d = int(head[2].removeprefix("d="))
        cutoff = int(head[3].removeprefix("K="))
    except ValueError as exc:
        raise HarmonicFormatError(f"bad header {lines[0]!r}") from exc
    coeffs = np.zeros((2 * cutoff + 1,) * d, dtype=complex)
    for ln in lines[1:]:
        toks = ln.replace(",", " ").split()
        if len(toks) != d + 2:
            raise HarmonicFormatError(f"expected {d + 2} columns, got {len(toks)}: {ln!r}")
        try:
            k = [int(t) for t in toks[:d]]
            re, im = float(toks[d]), float(toks[d + 1])
        except ValueError as exc:
            raise HarmonicFormatError(f"malformed line {ln!r}") from exc
        if any(abs(ki) > cutoff for ki in k):
            raise HarmonicFormatError(f"frequency {k} outside cutoff {cutoff}")
        coeffs[tuple(ki + cutoff for ki in k)] = re + 1j * im
    return HarmonicFunction(d, cutoff, coeffs)


def tail_weight_sum_bound(d: int, cutoff: int, lam: float) -> float:
    """Certified bound on sum_{|k|_inf > K} (1 + |k|^2)^(-lam).

    Counting lattice points shell by shell in |k|_inf and comparing with the
    integral of x^(-2 lam) times the shell-size polynomial gives a closed form
    that is monotone decreasing in K.  Requires 2 lam > d and K >= 1.
    """
    if 2.0 * lam <= d:
        raise ValueError(f"tail sum diverges: need 2*lam > d, got lam={lam}, d={d}")
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    K = float(cutoff)
    if d == 1:
        return 2.0 * K ** (1.0 - 2.0 * lam) / (2.0 * lam - 1.0)
    if d == 2:
        return 8.0 * (
            K ** (2.0 - 2.0 * lam) / (2.0 * lam - 2.0) + K ** (1.0 - 2.0 * lam) / (2.0 * lam - 1.0)
        )
    if d == 3:
        return (
            24.0 * K ** (3.0 - 2.0 * lam) / (2.0 * lam - 3.0)
            + 48.0 * K ** (2.0 - 2.0 * lam) / (2.0 * lam - 2.0)
            + 26.0 * K ** (1.0 - 2.0 * lam) / (2.0 * lam - 1.0)
        )
    raise NotImplementedError(f"tail bounds implemented for d <= {MAX_DIM}")
