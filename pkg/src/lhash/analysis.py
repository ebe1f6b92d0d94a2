"""Gap distributions of sorted hash outputs and the empty-slot estimator.

For ``n`` keys hashed into ``n`` unit-width slots, two consecutive sorted
outputs at distance ``x < 1`` share a slot with probability ``1 - x`` when the
slot boundary phase is uniform. With iid gaps of density ``f`` the expected
fraction of empty slots is therefore ``integral_0^1 (1 - x) f(x) dx``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

from .keyset import KeySet

DEFAULT_BINS = 1000
DEFAULT_GAP_MAX = 5.0


@dataclass(frozen=True, eq=False)
class GapHistogram:
    """Density histogram of gaps over ``[0, g_max]``.

    Gaps beyond ``g_max`` are counted in the last bin. ``bin_means`` holds the
    mean gap of the samples in each bin (``nan`` for empty bins, or ``None``
    when the histogram was built from a density rather than samples).
    """

    bin_edges: np.ndarray
    densities: np.ndarray
    n_gaps: int
    mean_gap: float
    bin_means: np.ndarray | None = None

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def masses(self) -> np.ndarray:
        return self.densities * self.widths

    def total_mass(self) -> float:
        return float(np.sum(self.masses))

    @classmethod
    def from_gaps(cls, gaps: np.ndarray, bins: int = DEFAULT_BINS,
                  g_max: float = DEFAULT_GAP_MAX) -> "GapHistogram":
        gaps = np.asarray(gaps, dtype=np.float64)
        if gaps.size == 0:
            raise ValueError("need at least one gap")
        if np.any(gaps < 0) or not np.all(np.isfinite(gaps)):
            raise ValueError("gaps must be finite and non-negative")
        if bins < 1 or g_max <= 0:
            raise ValueError("bins must be >= 1 and g_max > 0")
        edges = np.linspace(0.0, g_max, bins + 1)
        idx = np.minimum(np.searchsorted(edges, gaps, side="right") - 1, bins - 1)
        counts = np.bincount(idx, minlength=bins).astype(np.float64)
        sums = np.bincount(idx, weights=gaps, minlength=bins)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(counts > 0, sums / counts, np.nan)
        densities = counts / (gaps.size * np.diff(edges))
        return cls(edges, densities, int(gaps.size), float(np.mean(gaps)), means)

    @classmethod
    def from_density(cls, pdf, bins: int = DEFAULT_BINS,
                     g_max: float = DEFAULT_GAP_MAX) -> "GapHistogram":
        """Bin a probability density by its midpoint values.

        Mass beyond ``g_max`` goes into the last bin, as for sampled gaps.
        """
        edges = np.linspace(0.0, g_max, bins + 1)
        widths = np.diff(edges)
        mids = 0.5 * (edges[:-1] + edges[1:])
        dens = np.asarray(pdf(mids), dtype=np.float64).copy()
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise ValueError("density must be finite and non-negative")
        tail = 1.0 - float(np.sum(dens * widths))
        dens[-1] = max(dens[-1] + tail / widths[-1], 0.0)
        dens /= np.sum(dens * widths)
        mean = float(np.sum(mids * dens * widths))
        return cls(edges, dens, 0, mean, None)


def compute_gaps(outputs: np.ndarray, bins: int = DEFAULT_BINS,
                 g_max: float = DEFAULT_GAP_MAX) -> GapHistogram:
    """Histogram of ``y[t] - y[t-1]`` over sorted outputs ``y``."""
    y = np.asarray(outputs, dtype=np.float64)
    if y.size < 2:
        raise ValueError("need at least two outputs")
    gaps = np.diff(y)
    if np.any(gaps < 0):
        raise ValueError("outputs must be sorted ascending")
    return GapHistogram.from_gaps(gaps, bins, g_max)


def expected_empty_slots(g: GapHistogram, n: int | None = None) -> float:
    """Expected empty-slot fraction ``integral_0^1 (1 - x) f(x) dx``.

    Each bin contributes its mass below 1 times ``1 - x`` evaluated at the
    bin's sample mean (exact for a linear integrand) or, lacking samples, at
    the midpoint. A bin straddling 1 contributes only its part below 1,
    assuming a flat density inside the bin. ``n`` is accepted for symmetry
    with the absolute count ``n * fraction``; the fraction does not depend on it.
    """
    lo, hi = g.bin_edges[:-1], g.bin_edges[1:]
    mass = g.masses
    below = hi <= 1.0
    if g.bin_means is not None:
        x = np.where(np.isnan(g.bin_means), 0.5 * (lo + hi), g.bin_means)
    else:
        x = 0.5 * (lo + hi)
    total = float(np.sum(mass[below] * (1.0 - x[below])))
    straddle = (lo < 1.0) & (hi > 1.0)
    for i in np.flatnonzero(straddle):
        part = (1.0 - lo[i]) / (hi[i] - lo[i])
        mid = 0.5 * (lo[i] + 1.0)
        total += float(mass[i] * part * (1.0 - mid))
    return min(max(total, 0.0), 1.0)


def uniform_baseline(n: int) -> float:
    """``(1 - 1/n) ** n``: expected empty fraction for a truly random hash."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return 0.0
    return math.exp(n * math.log1p(-1.0 / n))


@dataclass(frozen=True)
class EmptySlotReport:
    n: int
    empty_fraction_empirical: float
    empty_fraction_analytic: float | None = None
    uniform_baseline: float | None = None


def empty_fraction(slots: np.ndarray, n_slots: int) -> float:
    occupied = np.bincount(np.asarray(slots, dtype=np.int64), minlength=n_slots)
    return float(np.count_nonzero(occupied == 0)) / n_slots


def empirical_empty_slots(keys: KeySet, hasher) -> EmptySlotReport:
    if hasher.n_slots != keys.count:
        raise ValueError("hasher must have exactly one slot per key")
    frac = empty_fraction(hasher.slots(keys.keys), hasher.n_slots)
    return EmptySlotReport(keys.count, frac)


def output_gaps(keys: KeySet, hasher, bins: int = DEFAULT_BINS,
                g_max: float = DEFAULT_GAP_MAX) -> GapHistogram:
    """Gap histogram of the hasher's continuous outputs, in slot units."""
    return compute_gaps(np.sort(hasher.positions(keys.keys)), bins, g_max)


def empty_slot_report(keys: KeySet, hasher, bins: int = DEFAULT_BINS,
                      g_max: float = DEFAULT_GAP_MAX) -> EmptySlotReport:
    """Measured, predicted and uniform-baseline empty fractions for one hasher."""
    emp = empirical_empty_slots(keys, hasher)
    hist = output_gaps(keys, hasher, bins, g_max)
    return EmptySlotReport(keys.count, emp.empty_fraction_empirical,
                           expected_empty_slots(hist, keys.count), uniform_baseline(keys.count))


def kolmogorov_distance_exp(hist: GapHistogram, rate: float = 1.0) -> float:
    """Max CDF distance, over the bin edges, between the histogram and an
    exponential law whose mass beyond ``g_max`` is lumped into the last bin."""
    edges = hist.bin_edges
    cdf = np.concatenate([[0.0], np.cumsum(hist.masses)])
    ref = 1.0 - np.exp(-rate * edges)
    ref[-1] = 1.0
    return float(np.max(np.abs(cdf - ref)))


HISTOGRAM_COLUMNS = ("dataset", "bin_lo", "bin_hi", "density")


def histogram_csv(hist: GapHistogram, dataset: str = "") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTOGRAM_COLUMNS)
    for lo, hi, d in zip(hist.bin_edges[:-1], hist.bin_edges[1:], hist.densities):
        w.writerow([dataset, repr(float(lo)), repr(float(hi)), repr(float(d))])
    return buf.getvalue()
