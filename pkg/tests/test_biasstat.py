import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from aliascope.biasstat import (
    Annotation,
    BinnedCounts,
    bin_annotations,
    category_bias_report,
    chi2_pvalue,
    chi2_statistic,
    read_annotations_csv,
    regularized_upper_gamma,
    write_bias_report_csv,
)


def _ann(category="cat", cx=0.5, cy=0.5, rel_h=0.3, rel_w=0.3, img=100.0):
    bw, bh = rel_w * img, rel_h * img
    return Annotation(category, cx * img - bw / 2, cy * img - bh / 2, bw, bh, img, img)


# ---------------------------------------------------------------------------
# annotations and binning
# ---------------------------------------------------------------------------

def test_annotation_validity():
    assert _ann().valid()
    assert not Annotation("c", -1, 0, 10, 10, 100, 100).valid()
    assert not Annotation("c", 95, 0, 10, 10, 100, 100).valid()  # overflows right
    assert not Annotation("c", 0, 0, 0, 10, 100, 100).valid()  # zero width
    assert not Annotation("c", 0, 0, 10, 10, 0, 100).valid()  # zero image


def test_bin_annotations_center_and_edges():
    anns = [_ann(cx=0.05, cy=0.05, rel_h=0.05, rel_w=0.05),  # top-left cell
            _ann(cx=0.95, cy=0.95, rel_h=0.05, rel_w=0.05),  # bottom-right cell
            _ann(cx=0.5, cy=0.5, rel_h=0.999, rel_w=0.05),   # center, last decile
            _ann(cx=0.5, cy=0.5, rel_h=0.55, rel_w=0.05)]    # center, decile 5
    pos, size, rejects = bin_annotations(anns)
    assert rejects == 0
    assert pos.observed[0] == 1
    assert pos.observed[24] == 1
    assert pos.observed[2 * 5 + 2] == 2
    assert size.observed[0] == 2
    assert size.observed[9] == 1
    assert size.observed[5] == 1
    assert pos.total == size.total == 4


def test_bin_annotations_boundary_value_goes_left_open_right():
    # center exactly on a bin edge belongs to the right bin; 1.0 to the last
    pos, size, _ = bin_annotations([_ann(cx=0.2, cy=0.5, rel_h=1.0, rel_w=0.4)])
    assert size.observed[9] == 1
    assert pos.observed[2 * 5 + 1] == 1  # cx = 0.2 falls in bin 1 of 5


def test_bin_annotations_counts_rejects():
    anns = [_ann(), Annotation("c", -5, 0, 10, 10, 100, 100)]
    _, _, rejects = bin_annotations(anns)
    assert rejects == 1
    with pytest.raises(ValueError):
        bin_annotations([])


# ---------------------------------------------------------------------------
# chi-squared statistic and p-values
# ---------------------------------------------------------------------------

def test_chi2_statistic_hand_computed():
    stat, df = chi2_statistic(BinnedCounts("x", (10, 0, 10, 0)))
    assert stat == pytest.approx(20.0, abs=1e-12)  # E = 5: 4 * 25 / 5
    assert df == 3
    stat, df = chi2_statistic(BinnedCounts("x", (7, 7, 7)))
    assert stat == 0.0
    assert df == 2


def test_chi2_statistic_rejects_degenerate():
    with pytest.raises(ValueError):
        chi2_statistic(BinnedCounts("x", (5,)))
    with pytest.raises(ValueError):
        chi2_statistic(BinnedCounts("x", (0, 0)))


def test_upper_gamma_known_values():
    # Q(1, x) = exp(-x); Q(1/2, x) = erfc(sqrt(x))
    for x in (0.1, 1.0, 5.0, 20.0):
        assert regularized_upper_gamma(1.0, x) == pytest.approx(math.exp(-x), rel=1e-12)
        assert regularized_upper_gamma(0.5, x) == pytest.approx(math.erfc(math.sqrt(x)), rel=1e-10)
    assert regularized_upper_gamma(3.0, 0.0) == 1.0


def test_upper_gamma_matches_scipy():
    special = pytest.importorskip("scipy.special")
    rng = np.random.default_rng(0)
    for _ in range(200):
        a = float(rng.uniform(0.5, 60.0))
        x = float(rng.uniform(0.0, 120.0))
        got = regularized_upper_gamma(a, x)
        want = float(special.gammaincc(a, x))
        assert got == pytest.approx(want, rel=1e-9, abs=1e-300)


def test_upper_gamma_rejects_bad_args():
    with pytest.raises(ValueError):
        regularized_upper_gamma(0.0, 1.0)
    with pytest.raises(ValueError):
        regularized_upper_gamma(1.0, -1.0)
    with pytest.raises(ValueError):
        regularized_upper_gamma(math.inf, 1.0)


def test_chi2_pvalue_known_values():
    # df=2: p = exp(-stat / 2)
    for stat in (0.5, 2.0, 10.0):
        assert chi2_pvalue(stat, 2) == pytest.approx(math.exp(-stat / 2), rel=1e-12)
    assert chi2_pvalue(0.0, 5) == 1.0
    # df=1: p = erfc(sqrt(stat / 2))
    assert chi2_pvalue(3.84, 1) == pytest.approx(0.05, abs=1e-3)


def test_chi2_pvalue_monotone_in_stat():
    ps = [chi2_pvalue(s, 9) for s in np.linspace(0, 120, 60)]
    assert all(a >= b for a, b in zip(ps, ps[1:]))


def test_chi2_pvalue_rejects_bad_args():
    with pytest.raises(ValueError):
        chi2_pvalue(-1.0, 2)
    with pytest.raises(ValueError):
        chi2_pvalue(1.0, 0)
    with pytest.raises(ValueError):
        chi2_pvalue(math.nan, 2)


@given(st.floats(0.5, 40.0), st.floats(0.0, 80.0))
def test_upper_gamma_in_unit_interval(a, x):
    q = regularized_upper_gamma(a, x)
    assert 0.0 <= q <= 1.0


# ---------------------------------------------------------------------------
# per-category report
# ---------------------------------------------------------------------------

# Deciles a box of each grid row can host: edge rows only fit boxes under
# 0.4 of the image height, so a jointly bin-balanced sample assigns small
# deciles to edge rows and the largest ones to the middle row.
_ROW_DECILES = {0: (0, 1, 2, 3), 1: (4, 5, 6, 7), 2: (8, 9), 3: (4, 5, 6, 7),
                4: (0, 1, 2, 3)}
_ROW_CY = {
    (0, 0): 0.05, (0, 1): 0.09, (0, 2): 0.15, (0, 3): 0.19,
    (1, 4): 0.24, (1, 5): 0.29, (1, 6): 0.34, (1, 7): 0.39,
    (2, 8): 0.5, (2, 9): 0.5,
    (3, 4): 0.76, (3, 5): 0.71, (3, 6): 0.66, (3, 7): 0.61,
    (4, 0): 0.95, (4, 1): 0.91, (4, 2): 0.85, (4, 3): 0.81,
}


def _balanced_annotations(category, n):
    """Exactly uniform over both position cells and size deciles."""
    assert n % 100 == 0
    out = []
    for row in range(5):
        deciles = _ROW_DECILES[row]
        per_pair = (n // 25) // len(deciles)
        for col in range(5):
            cx = (col + 0.5) / 5
            for d in deciles:
                cy = _ROW_CY[(row, d)]
                rel_h = (d + 0.5) / 10
                out.extend(_ann(category, cx=cx, cy=cy, rel_h=rel_h, rel_w=0.05)
                           for _ in range(per_pair))
    return out


def test_balanced_annotations_are_exactly_uniform():
    pos, size, rejects = bin_annotations(_balanced_annotations("x", 500))
    assert rejects == 0
    assert set(pos.observed) == {20}
    assert set(size.observed) == {50}


def test_report_flags_concentrated_not_uniform():
    concentrated = [_ann("biased", cx=0.5, cy=0.5, rel_h=0.31) for _ in range(2000)]
    fair = _balanced_annotations("fair", 2000)
    report = category_bias_report(concentrated + fair)
    by_cat = {r.category: r for r in report}
    assert by_cat["biased"].flagged
    assert by_cat["biased"].p_pos < 1e-10
    assert by_cat["biased"].p_size < 1e-10
    assert not by_cat["fair"].insufficient
    assert not by_cat["fair"].flagged
    assert by_cat["fair"].p_pos > 1e-10
    assert by_cat["fair"].p_size > 1e-10


def test_report_insufficient_category():
    report = category_bias_report([_ann("tiny") for _ in range(10)])
    assert len(report) == 1
    assert report[0].insufficient
    assert math.isnan(report[0].chi2_pos)
    assert not report[0].flagged


def test_report_sorted_by_category():
    anns = [_ann("zeta"), _ann("alpha")]
    report = category_bias_report(anns)
    assert [r.category for r in report] == ["alpha", "zeta"]


def test_report_threshold_boundary():
    # mild imbalance stays unflagged at the extreme 1e-10 threshold
    anns = _balanced_annotations("ok", 1000)
    anns.extend(_ann("ok", cx=0.5, cy=0.5, rel_h=0.55, rel_w=0.05) for _ in range(40))
    (r,) = category_bias_report(anns)
    assert not r.insufficient
    assert r.chi2_pos > 0 and r.chi2_size > 0
    assert not r.flagged


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def test_read_annotations_csv(tmp_path):
    path = tmp_path / "ann.csv"
    path.write_text("category,img_w,img_h,box_x,box_y,box_w,box_h\n"
                    "dog,640,480,10,20,100,50\n"
                    "\n"
                    "cat,320,240,0,0,320,240\n")
    anns = read_annotations_csv(path)
    assert len(anns) == 2
    assert anns[0] == Annotation("dog", 10.0, 20.0, 100.0, 50.0, 640.0, 480.0)
    assert anns[1].category == "cat"


def test_read_annotations_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(ValueError, match="header"):
        read_annotations_csv(path)


def test_write_bias_report_csv(tmp_path):
    anns = [_ann("biased", cx=0.5, cy=0.5, rel_h=0.31) for _ in range(200)]
    anns += [_ann("tiny")]
    report = category_bias_report(anns)
    path = tmp_path / "report.csv"
    write_bias_report_csv(report, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "#bins,position=5x5,size=10"
    assert lines[1].startswith("category,")
    rows = {line.split(",")[0]: line for line in lines[2:]}
    assert "true" in rows["biased"]
    assert "insufficient data" in rows["tiny"]
