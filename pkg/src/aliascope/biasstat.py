"""Dataset-bias audit: bin bounding-box positions and sizes per category and
chi-squared-test them against the uniform distribution.

The binning defaults (5x5 position grid, 10 size deciles) are artifact
choices, configurable and recorded in the report header. Sizes are box
height normalized by image height so differently-sized images compare.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

FLAG_THRESHOLD = 1e-10  # categories below this p are "highly non uniform"


@dataclass(frozen=True)
class Annotation:
    category: str
    box_x: float
    box_y: float
    box_w: float
    box_h: float
    img_w: float
    img_h: float

    def valid(self) -> bool:
        return (self.box_w > 0 and self.box_h > 0 and self.img_w > 0 and self.img_h > 0
                and self.box_x >= 0 and self.box_y >= 0
                and self.box_x + self.box_w <= self.img_w
                and self.box_y + self.box_h <= self.img_h)


@dataclass(frozen=True)
class BinnedCounts:
    description: str
    observed: tuple[int, ...]

    @property
    def total(self) -> int:
        return sum(self.observed)


def _bin_index(value: float, k: int) -> int:
    """Right-open bins over [0, 1]; the last interval is closed."""
    return min(int(value * k), k - 1)


def bin_annotations(annotations, position_grid: int = 5, size_bins: int = 10):
    """Histogram box centers (normalized to [0,1]^2) and relative heights.

    Returns (position_counts, size_counts, rejects) where the counts are
    BinnedCounts and rejects tallies invalid boxes that were skipped.
    """
    if not annotations:
        raise ValueError("no annotations to bin")
    pos = [0] * (position_grid * position_grid)
    size = [0] * size_bins
    rejects = 0
    for a in annotations:
        if not a.valid():
            rejects += 1
            continue
        cx = (a.box_x + a.box_w / 2) / a.img_w
        cy = (a.box_y + a.box_h / 2) / a.img_h
        pos[_bin_index(cy, position_grid) * position_grid + _bin_index(cx, position_grid)] += 1
        size[_bin_index(a.box_h / a.img_h, size_bins)] += 1
    return (BinnedCounts(f"position {position_grid}x{position_grid}", tuple(pos)),
            BinnedCounts(f"size height/img_h {size_bins} bins", tuple(size)),
            rejects)


def chi2_statistic(counts: BinnedCounts) -> tuple[float, int]:
    """Chi-squared against the uniform expectation E_i = N / k."""
    k = len(counts.observed)
    if k < 2:
        raise ValueError("need at least 2 bins")
    n = counts.total
    if n == 0:
        raise ValueError("empty counts")
    e = n / k
    stat = sum((o - e) ** 2 / e for o in counts.observed)
    return stat, k - 1


def _gamma_series(a: float, x: float) -> float:
    """Regularized lower incomplete gamma P(a, x) by power series."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(500):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) by continued fraction.

    Modified Lentz evaluation of the standard continued fraction; converges
    fast for x > a + 1.
    """
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 500):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h * math.exp(-x + a * math.log(x) - math.lgamma(a))


def regularized_upper_gamma(a: float, x: float) -> float:
    """Q(a, x): series branch for x < a + 1, continued fraction otherwise."""
    if a <= 0 or x < 0 or not (math.isfinite(a) and math.isfinite(x)):
        raise ValueError("requires a > 0 and finite x >= 0")
    if x == 0.0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_pvalue(stat: float, df: int) -> float:
    """Upper-tail p-value Q(df/2, stat/2); monotone decreasing in stat."""
    if not math.isfinite(stat) or stat < 0:
        raise ValueError("chi-squared statistic must be finite and >= 0")
    if df < 1:
        raise ValueError("df must be >= 1")
    return regularized_upper_gamma(df / 2.0, stat / 2.0)


@dataclass(frozen=True)
class CategoryBias:
    category: str
    n: int
    chi2_pos: float
    p_pos: float
    chi2_size: float
    p_size: float
    flagged: bool
    insufficient: bool


def category_bias_report(annotations, position_grid: int = 5, size_bins: int = 10,
                         min_per_bin: int = 5) -> list[CategoryBias]:
    """Per-category uniformity test of positions and sizes.

    Categories with fewer than min_per_bin * max(bins) valid boxes are
    marked insufficient rather than tested. A category is flagged when
    either p-value falls below 1e-10.
    """
    groups: dict[str, list[Annotation]] = {}
    for a in annotations:
        groups.setdefault(a.category, []).append(a)
    out = []
    k_max = max(position_grid * position_grid, size_bins)
    for category in sorted(groups):
        anns = [a for a in groups[category] if a.valid()]
        if len(anns) < min_per_bin * k_max:
            out.append(CategoryBias(category, len(anns), math.nan, math.nan,
                                    math.nan, math.nan, False, True))
            continue
        pos, size, _ = bin_annotations(anns, position_grid, size_bins)
        cp, dfp = chi2_statistic(pos)
        cs, dfs = chi2_statistic(size)
        pp, ps = chi2_pvalue(cp, dfp), chi2_pvalue(cs, dfs)
        out.append(CategoryBias(category, len(anns), cp, pp, cs, ps,
                                pp < FLAG_THRESHOLD or ps < FLAG_THRESHOLD, False))
    return out


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

ANNOTATION_HEADER = ["category", "img_w", "img_h", "box_x", "box_y", "box_w", "box_h"]


def read_annotations_csv(path) -> list[Annotation]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ANNOTATION_HEADER:
            raise ValueError(f"expected header {','.join(ANNOTATION_HEADER)}")
        out = []
        for row in reader:
            if not row:
                continue
            cat, iw, ih, bx, by, bw, bh = row
            out.append(Annotation(cat, float(bx), float(by), float(bw), float(bh),
                                  float(iw), float(ih)))
    return out


def write_bias_report_csv(report, path, position_grid: int = 5, size_bins: int = 10) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"#bins,position={position_grid}x{position_grid},size={size_bins}\n")
        writer = csv.writer(fh)
        writer.writerow(["category", "n", "chi2_pos", "p_pos", "chi2_size", "p_size", "flagged"])
        for r in report:
            if r.insufficient:
                writer.writerow([r.category, r.n, "", "", "", "", "insufficient data"])
            else:
                writer.writerow([r.category, r.n, repr(r.chi2_pos), repr(r.p_pos),
                                 repr(r.chi2_size), repr(r.p_size), str(r.flagged).lower()])
