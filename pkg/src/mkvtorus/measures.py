"""Points and probability measures on the torus [0,2pi)^d.

Two concrete measure representations are provided: weighted particle clouds
and piecewise-constant grid densities.  Both expose a common quadrature view
(points, masses), which every integral in the package goes through, so grid
measures are integrated by the midpoint rule and clouds exactly.

All objects are immutable after construction; random sampling takes an
explicit seed and is reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fourier import FourierTable, MAX_DIM, TWO_PI, grid_midpoints, measure_table
from .rng import generator_for

WEIGHT_TOL = 1e-12


def reduce_to_torus(x) -> np.ndarray:
    """Reduce coordinates mod 2pi into [0, 2pi).  Rejects non-finite input."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("coordinates must be finite")
    out = np.mod(arr, TWO_PI)
    # mod can return 2pi when the argument is a tiny negative number
    return np.where(out >= TWO_PI, 0.0, out)


def torus_distance(x, y) -> np.ndarray:
    """Geodesic distance on the torus, coordinate-wise shortest arc."""
    dx = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    dx = np.minimum(np.mod(dx, TWO_PI), TWO_PI - np.mod(dx, TWO_PI))
    if dx.ndim == 0:
        return float(dx)
    return np.sqrt((dx * dx).sum(axis=-1)) if dx.ndim > 1 else float(np.sqrt((dx * dx).sum()))


class TorusMeasure:
    """Common interface of the two measure representations."""

    dim: int

    def quadrature(self) -> tuple[np.ndarray, np.ndarray]:
        """(points (n,d), masses (n,)) against which integrals are computed."""
        raise NotImplementedError

    def integrate(self, f) -> float:
        pts, masses = self.quadrature()
        return float(np.sum(masses * np.asarray(f(pts), dtype=float)))

    def fourier(self, cutoff: int) -> FourierTable:
        pts, masses = self.quadrature()
        return measure_table(pts, masses, cutoff)


@dataclass(frozen=True)
class ParticleCloud(TorusMeasure):
    """Atomic probability measure sum_i w_i delta_{x_i}."""

    points: np.ndarray  # (n, d), coordinates in [0, 2pi)
    weights: np.ndarray  # (n,), nonnegative, summing to one

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.shape[0] != w.shape[0]:
            raise ValueError("points and weights disagree in length")
        if not 1 <= pts.shape[1] <= MAX_DIM:
            raise ValueError(f"dimension must be in 1..{MAX_DIM}")
        if np.any(w < 0):
            raise ValueError("weights must be nonnegative")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1 within {WEIGHT_TOL}")
        pts = reduce_to_torus(pts)
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @staticmethod
    def uniform_atoms(points) -> "ParticleCloud":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        n = pts.shape[0]
        return ParticleCloud(pts, np.full(n, 1.0 / n))

    @staticmethod
    def dirac(x) -> "ParticleCloud":
        return ParticleCloud(np.atleast_2d(np.asarray(x, dtype=float)), np.array([1.0]))

    def quadrature(self):
        return self.points, self.weights


@dataclass(frozen=True)
class GridDensity(TorusMeasure):
    """Piecewise-constant density on the uniform grid over [0,2pi)^d."""

    values: np.ndarray  # (n1, ..., nd) nonnegative cell values

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if not 1 <= vals.ndim <= MAX_DIM:
            raise ValueError(f"dimension must be in 1..{MAX_DIM}")
        if np.any(vals < 0):
            raise ValueError("density values must be nonnegative")
        if abs(vals.sum() * self.cell_volume_of(vals.shape) - 1.0) > WEIGHT_TOL:
            raise ValueError("density does not integrate to 1 within tolerance")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @staticmethod
    def cell_volume_of(shape) -> float:
        return TWO_PI ** len(shape) / float(np.prod(shape))

    @property
    def dim(self) -> int:
        return self.values.ndim

    @property
    def cell_volume(self) -> float:
        return self.cell_volume_of(self.values.shape)

    @staticmethod
    def from_function(f, shape) -> "GridDensity":
        """Sample a density function at cell midpoints and renormalize."""
        centers = grid_midpoints(tuple(shape))
        vals = np.asarray(f(centers), dtype=float).reshape(tuple(shape))
        vals = np.maximum(vals, 0.0)
        total = vals.sum() * GridDensity.cell_volume_of(tuple(shape))
        if total <= 0:
            raise ValueError("density function vanishes on the grid")
        return GridDensity(vals / total)

    def quadrature(self):
        return grid_midpoints(self.values.shape), self.values.ravel() * self.cell_volume


def fourier_coefficient(mu: TorusMeasure, k) -> complex:
    """Single moment F_k(mu) = (2pi)^(-d/2) integral of exp(-i k.x) d mu."""
    k = np.atleast_1d(np.asarray(k, dtype=float))
    pts, masses = mu.quadrature()
    if k.shape[0] != pts.shape[1]:
        raise ValueError("frequency dimension does not match the measure")
    phases = np.exp(-1j * pts @ k)
    return complex(TWO_PI ** (-pts.shape[1] / 2.0) * np.sum(masses * phases))


def fourier_table(mu: TorusMeasure, cutoff: int) -> FourierTable:
    """All moments with |k|_inf <= cutoff; conjugate symmetry is exact."""
    if cutoff < 1:
        raise ValueError(f"cutoff must be >= 1, got {cutoff}")
    return mu.fourier(cutoff)


def sample_measure(mu: TorusMeasure, n: int, seed) -> ParticleCloud:
    """n i.i.d. draws from mu as a uniform-weight cloud, deterministic in seed.

    Clouds are resampled by inverting the weight CDF; grid densities are drawn
    cell-then-position via inverse CDF per marginal slice.
    """
    if n < 1:
        raise ValueError("need n >= 1 samples")
    gen = generator_for(seed, "sample")
    if isinstance(mu, ParticleCloud):
        u = gen.random(n)
        cdf = np.cumsum(mu.weights)
        cdf[-1] = 1.0
        idx = np.searchsorted(cdf, u, side="right")
        pts = mu.points[idx]
        return ParticleCloud(pts, np.full(n, 1.0 / n))
    if isinstance(mu, GridDensity):
        return ParticleCloud(_sample_grid(mu, n, gen), np.full(n, 1.0 / n))
    raise TypeError(f"unsupported measure type {type(mu)!r}")


def _sample_grid(mu: GridDensity, n: int, gen) -> np.ndarray:
    shape = mu.values.shape
    d = mu.dim
    probs = mu.values / mu.values.sum()
    out = np.empty((n, d))
    cell_idx = np.zeros(n, dtype=int)  # flat index into the leading axes drawn so far
    lead_shape: tuple[int, ...] = ()
    for axis in range(d):
        m = shape[axis]
        # marginal over the remaining axes, conditioned on the cells drawn so far
        rest = probs.reshape(lead_shape + (m, -1)).sum(axis=-1)
        cond = rest.reshape(-1, m)[cell_idx] if lead_shape else np.broadcast_to(rest, (n, m))
        cdf = np.cumsum(cond, axis=1)
        total = cdf[:, -1:].copy()
        total[total == 0] = 1.0
        cdf = cdf / total
        u = gen.random(n)
        j = (cdf < u[:, None]).sum(axis=1)
        j = np.minimum(j, m - 1)
        h = TWO_PI / m
        out[:, axis] = (j + gen.random(n)) * h
        cell_idx = cell_idx * m + j
        lead_shape = lead_shape + (m,)
    return out


def bin_to_grid(cloud: ParticleCloud, shape) -> GridDensity:
    """Histogram a cloud onto the uniform grid (mass-preserving binning)."""
    shape = tuple(shape)
    idx = np.floor(cloud.points / TWO_PI * np.asarray(shape)).astype(int)
    idx = np.minimum(idx, np.asarray(shape) - 1)
    flat = np.ravel_multi_index(idx.T, shape)
    mass = np.bincount(flat, weights=cloud.weights, minlength=int(np.prod(shape)))
    return GridDensity(mass.reshape(shape) / GridDensity.cell_volume_of(shape))


# ---------------------------------------------------------------------------
# Plain-text serialization: header line "torus-measure v1 d=<d> kind=<kind>",
# then one "x1 ... xd w" line per particle, or a shape line plus row-major
# density values.  Commas and whitespace are both accepted as separators.
# ---------------------------------------------------------------------------

FORMAT_NAME = "torus-measure"
FORMAT_VERSION = "v1"


class MeasureFormatError(ValueError):
    pass


def dumps_measure(mu: TorusMeasure) -> str:
    if isinstance(mu, ParticleCloud):
        lines = [f"{FORMAT_NAME} {FORMAT_VERSION} d={mu.dim} kind=particles"]
        for p, w in zip(mu.points, mu.weights):
            lines.append(" ".join(f"{c:.17g}" for c in p) + f" {w:.17g}")
        return "\n".join(lines) + "\n"
    if isinstance(mu, GridDensity):
        lines = [f"{FORMAT_NAME} {FORMAT_VERSION} d={mu.dim} kind=grid"]
        lines.append(" ".join(str(m) for m in mu.values.shape))
        lines.append(" ".join(f"{v:.17g}" for v in mu.values.ravel()))
        return "\n".join(lines) + "\n"
    raise TypeError(f"unsupported measure type {type(mu)!r}")


def loads_measure(text: str) -> TorusMeasure:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    if not lines:
        raise MeasureFormatError("empty measure file")
    head = lines[0].replace(",", " ").split()
    if len(head) != 4 or head[0] != FORMAT_NAME or head[1] != FORMAT_VERSION:
        raise MeasureFormatError(f"bad header {lines[0]!r}")
    try:
        d = int(head[2].removeprefix("d="))
        kind = head[3].removeprefix("kind=")
    except ValueError as exc:
        raise MeasureFormatError(f"bad header {lines[0]!r}") from exc
    body = [ln.replace(",", " ").split() for ln in lines[1:]]
    if kind == "particles":
        if not body:
            raise MeasureFormatError("particle file has no atoms")
        try:
            rows = np.array([[float(tok) for tok in row] for row in body])
        except ValueError as exc:
            raise MeasureFormatError("malformed particle line") from exc
        if rows.shape[1] != d + 1:
            raise MeasureFormatError(f"expected {d + 1} columns, got {rows.shape[1]}")
        return ParticleCloud(rows[:, :d], rows[:, d])
    if kind == "grid":
        if len(body) < 2:
            raise MeasureFormatError("grid file needs a shape line and values")
        try:
            shape = tuple(int(tok) for tok in body[0])
            vals = np.array([float(tok) for row in body[1:] for tok in row])
        except ValueError as exc:
            raise MeasureFormatError("malformed grid data") from exc
        if len(shape) != d:
            raise MeasureFormatError(f"shape line has {len(shape)} entries, expected {d}")
        if vals.size != int(np.prod(shape)):
            raise MeasureFormatError("value count does not match grid shape")
        return GridDensity(vals.reshape(shape))
    raise MeasureFormatError(f"unknown measure kind {kind!r}")


def save_measure(mu: TorusMeasure, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_measure(mu))


def load_measure(path) -> TorusMeasure:
    with open(path) as fh:
        return loads_measure(fh.read())
