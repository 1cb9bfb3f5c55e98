"""Quenched i.i.d. Gaussian field with counter-based generation.

Every site value is a pure function of (seed, stream, x, y), so a field
restricts consistently across nested regions and any site can be filled
independently (and in parallel).  Gaussians come from inverting the normal
CDF on a 64-bit uniform, which is reproducible to the last bit for a fixed
seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import ndtri

from .geometry import BoxRegion, GridIndex, site_set

MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)

# distinct stream ids so field values and sampler uniforms never collide
STREAM_FIELD = 0x11
STREAM_SWEEP = 0x22

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _fmix(z: np.ndarray) -> np.ndarray:
    """splitmix64 output mixing."""
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def keyed_bits(seed: int, stream: int, a, b) -> np.ndarray:
    """64 mixed bits per (a, b) pair under (seed, stream).  a, b may be arrays."""
    with np.errstate(over="ignore"):
        h = _fmix(np.uint64(seed) + _GAMMA)
        h = _fmix(h ^ _fmix(np.uint64(stream) * _GAMMA + _GAMMA))
        a64 = np.asarray(a, dtype=np.int64).astype(np.uint64)
        b64 = np.asarray(b, dtype=np.int64).astype(np.uint64)
        h = _fmix(h ^ (a64 * _GAMMA + _GAMMA))
        h = _fmix(h ^ (b64 * _GAMMA + _GAMMA))
    return h


def keyed_uniform(seed: int, stream: int, a, b) -> np.ndarray:
    """Uniform in (0, 1), 53-bit resolution."""
    bits = keyed_bits(seed, stream, a, b)
    return ((bits >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def site_gaussian(seed: int, x, y, epsilon: float = 1.0) -> np.ndarray:
    return epsilon * ndtri(keyed_uniform(seed, STREAM_FIELD, x, y))


@dataclass(frozen=True)
class FieldSample:
    """Gaussian field on a region, with an optional additive overlay."""

    region: object
    epsilon: float
    seed: int
    grid: GridIndex
    values: np.ndarray  # aligned with grid.sites
    perturbation: tuple = ()

    def value(self, v) -> float:
        return float(self.values[self.grid.index[v]])

    def as_dict(self) -> dict:
        return {v: float(self.values[i]) for i, v in enumerate(self.grid.sites)}

    def sum_over(self, sites) -> float:
        idx = [self.grid.index[v] for v in site_set(sites)]
        return float(self.values[idx].sum())

    def total(self) -> float:
        return float(self.values.sum())

    def restricted_to(self, region) -> "FieldSample":
        """Same realization on a subregion (values copied, not regenerated)."""
        sub = GridIndex(region)
        vals = np.array([self.values[self.grid.index[v]] for v in sub.sites])
        return FieldSample(region=region, epsilon=self.epsilon, seed=self.seed,
                           grid=sub, values=vals, perturbation=self.perturbation)

    def shifted(self, zones) -> "FieldSample":
        """Pointwise shifted copy; zones is a tuple of (site-set, delta)."""
        vals = self.values.copy()
        for sites, delta in zones:
            for v in site_set(sites):
                if v not in self.grid.index:
                    raise ValueError(f"perturbation zone leaves the region: {v}")
                vals[self.grid.index[v]] += delta
        return replace(self, values=vals,
                       perturbation=self.perturbation + tuple(zones))


def sample_field(region, epsilon: float, seed: int) -> FieldSample:
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    grid = GridIndex(region)
    xs = np.array([v[0] for v in grid.sites], dtype=np.int64)
    ys = np.array([v[1] for v in grid.sites], dtype=np.int64)
    vals = site_gaussian(seed, xs, ys, epsilon)
    return FieldSample(region=region, epsilon=epsilon, seed=seed,
                       grid=grid, values=vals)


@dataclass(frozen=True)
class PerturbationSpec:
    """Additive overlay: a tuple of (zone site-set, shift) layers."""

    zones: tuple

    @classmethod
    def uniform_shift(cls, delta: float, region) -> "PerturbationSpec":
        return cls(zones=((site_set(region), delta),))

    @classmethod
    def annulus_shift(cls, delta: float, N: int) -> "PerturbationSpec":
        """Shift by delta on Lambda_N \\ Lambda_{N/4}."""
        outer, inner = site_set(BoxRegion(N)), site_set(BoxRegion(N // 4))
        return cls(zones=((outer - inner, delta),))

    @classmethod
    def two_zone(cls, delta_prime: float, delta: float, t: float,
                 N: int) -> "PerturbationSpec":
        """delta' on Lambda_N \\ Lambda_{N/8}; t*delta on Lambda_{N/8}."""
        outer, inner = site_set(BoxRegion(N)), site_set(BoxRegion(N // 8))
        return cls(zones=((outer - inner, delta_prime), (inner, t * delta)))

    @classmethod
    def interpolated(cls, delta: float, t: float, N: int) -> "PerturbationSpec":
        """t*delta on Lambda_N \\ Lambda_{N/4}."""
        outer, inner = site_set(BoxRegion(N)), site_set(BoxRegion(N // 4))
        return cls(zones=((outer - inner, t * delta),))


def apply_perturbation(field: FieldSample, spec: PerturbationSpec) -> FieldSample:
    return field.shifted(spec.zones)


def radon_nikodym_weight(perturbed_field_sum: float, delta: float,
                         region_size: int, epsilon: float) -> float:
    """Density dP/dP~ of the unshifted law against the uniformly shifted law,
    evaluated on the perturbed field (through its region sum)."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    e2 = epsilon * epsilon
    first = -delta * (perturbed_field_sum - delta * region_size) / e2
    second = -delta * delta * region_size / (2.0 * e2)
    return float(np.exp(first + second))


def field_sum_variance(epsilon: float, size: int) -> float:
    """Var of the field summed over `size` sites."""
    return epsilon * epsilon * size


@dataclass(frozen=True)
class AnnulusDecomposition:
    annulus: object
    mean_part: float
    residuals: dict

    def reconstruct(self, v) -> float:
        return self.mean_part + self.residuals[v]


def decompose_annulus(field: FieldSample, annulus) -> AnnulusDecomposition:
    sites = site_set(annulus)
    if not sites:
        raise ValueError("empty annulus")
    vals = {v: field.value(v) for v in sites}
    mean = sum(vals.values()) / len(sites)
    return AnnulusDecomposition(annulus=annulus, mean_part=mean,
                                residuals={v: vals[v] - mean for v in sites})


FIELD_MAGIC = b"RFIMFLD1"


def dump_field_csv(field: FieldSample, path) -> None:
    with open(path, "w") as f:
        f.write("x,y,value\n")
        for v in sorted(field.grid.sites):
            f.write(f"{v[0]},{v[1]},{field.value(v)!r}\n")


def dump_field_binary(field: FieldSample, path) -> None:
    """Magic "RFIMFLD1", then bbox header, then little-endian f64 row-major
    over the bounding box (NaN outside the region)."""
    g = field.grid
    arr = np.full((g.height, g.width), np.nan)
    rows, cols = g.rows_cols()
    arr[rows, cols] = field.values
    with open(path, "wb") as f:
        f.write(FIELD_MAGIC)
        f.write(struct.pack("<qqqq", g.x0, g.y0, g.x1, g.y1))
        f.write(struct.pack("<d", field.epsilon))
        f.write(struct.pack("<q", field.seed))
        f.write(arr.astype("<f8").tobytes(order="C"))


def load_field_binary(path) -> tuple[dict, float, int]:
    """Returns (site -> value map, epsilon, seed)."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != FIELD_MAGIC:
            raise ValueError("bad magic")
        x0, y0, x1, y1 = struct.unpack("<qqqq", f.read(32))
        epsilon, = struct.unpack("<d", f.read(8))
        seed, = struct.unpack("<q", f.read(8))
        h = y1 - y0 + 1
        w = x1 - x0 + 1
        arr = np.frombuffer(f.read(8 * h * w), dtype="<f8").reshape(h, w)
    out = {}
    for r in range(h):
        for c in range(w):
            if not np.isnan(arr[r, c]):
                out[(x0 + c, y0 + r)] = float(arr[r, c])
    return out, epsilon, seed
