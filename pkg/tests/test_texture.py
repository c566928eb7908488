import json

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

import oracles
from tumormap import kernels
from tumormap.imaging import Channel, ScalarImage
from tumormap.texture import (DominantPatternDictionary, LayoutError, LbpConfig, PatternHistogram,
                              assemble_feature, build_dictionary, dominant_direction, extract_histogram,
                              lbp_code, neighbor_offsets, project, rlbp_code, sample_neighbors, select_dominant)

BACKENDS = [("numpy", kernels.fallback_code_histogram)]
if kernels.compiled_code_histogram is not None:
    BACKENDS.append(("cython", kernels.compiled_code_histogram))


def img(values, channel=Channel.GRAY):
    return ScalarImage(np.asarray(values, dtype=np.float64), channel)


# ---------------------------------------------------------------- sampling

def test_axis_neighbours_for_p4_r1():
    a = np.arange(25.0).reshape(5, 5)
    s = sample_neighbors(a, 2, 2, LbpConfig(P=4, R=1))
    # east, north (row above), west, south
    assert s.tolist() == [a[2, 3], a[1, 2], a[2, 1], a[3, 2]]


def test_constant_image_samples():
    s = sample_neighbors(np.full((9, 9), 7.25), 4, 4, LbpConfig(P=12, R=2))
    assert np.all(s == 7.25)


def test_bilinear_ramp_is_exact():
    yy, xx = np.mgrid[0:7, 0:7]
    ramp = (xx + yy).astype(float)
    s = sample_neighbors(ramp, 3, 3, LbpConfig(P=8, R=1))
    # diagonal neighbour 1 lies at (x + 1/sqrt2, y - 1/sqrt2): x + y is unchanged
    assert s[1] == pytest.approx(6.0, abs=1e-12)
    c, sn = np.cos(np.pi / 4), np.sin(np.pi / 4)
    expected = [3 + 3 + dx + dy for dx, dy in [(1, 0), (c, -sn), (0, -1), (-c, -sn), (-1, 0), (-c, sn), (0, 1), (c, sn)]]
    np.testing.assert_allclose(s, expected, atol=1e-12)


def test_offsets_snap_and_rotate():
    offs = neighbor_offsets(16, 3.0)
    assert offs[0] == (3.0, 0.0) and offs[4] == (0.0, -3.0) and offs[8] == (-3.0, 0.0) and offs[12] == (0.0, 3.0)
    for p in range(12):
        dx, dy = offs[p]
        assert offs[p + 4] == (dy, -dx)  # quarter turn, bit exact


def test_sample_rejects_border_pixel():
    with pytest.raises(ValueError):
        sample_neighbors(np.zeros((9, 9)), 2, 4, LbpConfig(P=16, R=3))


# ---------------------------------------------------------------- codes

def test_lbp_examples():
    assert lbp_code([5] * 8, 5) == 255
    assert lbp_code([10, 1, 1, 1, 1, 1, 1, 1], 5) == 1
    assert lbp_code([1] * 8, 5) == 0


def test_rlbp_examples():
    assert dominant_direction([5] * 8, 5) == 0 and rlbp_code([5] * 8, 5) == 255
    s = [10, 1, 1, 1, 1, 1, 1, 1]
    assert dominant_direction(s, 5) == 0 and rlbp_code(s, 5) == 1
    shifted = [1, 1, 1, 10, 1, 1, 1, 1]
    assert dominant_direction(shifted, 5) == 3 and rlbp_code(shifted, 5) == 1


@given(st.lists(st.floats(-100, 100), min_size=4, max_size=24), st.floats(-100, 100), st.integers(0, 23))
def test_rlbp_circular_shift_invariance(samples, center, k):
    mags = [abs(g - center) for g in samples]
    assume(mags.count(max(mags)) == 1)
    k %= len(samples)
    rolled = samples[-k:] + samples[:-k] if k else samples
    assert rlbp_code(rolled, center) == rlbp_code(samples, center)
    assert rlbp_code(samples, center) == oracles.codes(samples, center, True)
    assert lbp_code(samples, center) == oracles.codes(samples, center, False)


def test_rlbp_is_rotated_lbp():
    rng = np.random.default_rng(3)
    for _ in range(200):
        s = rng.normal(size=16).tolist()
        d = dominant_direction(s, 0.0)
        code = lbp_code(s, 0.0)
        assert rlbp_code(s, 0.0) == ((code >> d) | (code << (16 - d))) & 0xFFFF


# ---------------------------------------------------------------- histograms

@pytest.mark.parametrize("variant", ["LBP", "RLBP"])
def test_constant_image_histogram(variant):
    h = extract_histogram(img(np.full((10, 10), 3.0)), LbpConfig(P=8, R=1, variant=variant))
    assert h.counts[255] == 64 and h.total == 64


@pytest.mark.parametrize("P,R", [(8, 1), (12, 2), (16, 3), (6, 1.5)])
def test_histogram_mass(P, R):
    a = np.random.default_rng(P).uniform(0, 255, (23, 31))
    h = extract_histogram(img(a), LbpConfig(P=P, R=R))
    b = int(np.ceil(R))
    assert h.total == (23 - 2 * b) * (31 - 2 * b)


def test_too_small_and_non_finite():
    with pytest.raises(ValueError):
        extract_histogram(img(np.zeros((6, 20))), LbpConfig(P=16, R=3))
    a = np.zeros((12, 12))
    a[5, 5] = np.nan
    with pytest.raises(ValueError):
        extract_histogram(img(a), LbpConfig(P=8, R=1))


@pytest.mark.parametrize("backend_name, backend", BACKENDS)
@pytest.mark.parametrize("variant", ["LBP", "RLBP"])
@pytest.mark.parametrize("P,R", [(8, 1), (12, 2), (16, 3)])
def test_matches_naive_oracle(backend_name, backend, variant, P, R):
    rng = np.random.default_rng([P, int(variant == "RLBP")])
    for trial in range(3):
        a = rng.integers(0, 256, (16, 16)).astype(float) if trial == 0 else rng.uniform(0, 1, (17, 19))
        got = extract_histogram(img(a), LbpConfig(P=P, R=R, variant=variant), backend=backend)
        np.testing.assert_array_equal(got.counts, oracles.naive_histogram(a, P, R, variant))


@pytest.mark.parametrize("P,R", [(8, 1), (16, 3)])
def test_per_pixel_path_matches_kernel(P, R):
    a = np.random.default_rng(7).uniform(0, 9, (14, 15))
    cfg = LbpConfig(P=P, R=R)
    b = cfg.border
    hist = np.zeros(1 << P, dtype=np.int64)
    for y in range(b, 14 - b):
        for x in range(b, 15 - b):
            hist[rlbp_code(sample_neighbors(a, x, y, cfg), a[y, x])] += 1
    np.testing.assert_array_equal(extract_histogram(img(a), cfg).counts, hist)


def test_backends_agree_on_large_image():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    a = oracles.smooth_texture(np.random.default_rng(0), 120)
    for variant in ("LBP", "RLBP"):
        cfg = LbpConfig(variant=variant)
        hs = [extract_histogram(img(a), cfg, backend=f).counts for _, f in BACKENDS]
        np.testing.assert_array_equal(hs[0], hs[1])


@pytest.mark.parametrize("k", [1, 2, 3])
def test_rlbp_rotation_invariance(k):
    a = oracles.smooth_texture(np.random.default_rng(11), 96)
    cfg = LbpConfig(P=16, R=3, variant="RLBP")
    base = extract_histogram(img(a), cfg).counts
    np.testing.assert_array_equal(extract_histogram(img(np.rot90(a, k)), cfg).counts, base)


def test_lbp_not_rotation_invariant():
    a = oracles.line_texture(96)
    cfg = LbpConfig(P=16, R=3, variant="LBP")
    h0 = extract_histogram(img(a), cfg).counts
    h1 = extract_histogram(img(np.rot90(a)), cfg).counts
    tv = 0.5 * np.abs(h0 / h0.sum() - h1 / h1.sum()).sum()
    assert tv > 0.01


@pytest.mark.parametrize("scale", [0.5, 2.0, 8.0])
def test_power_of_two_scaling_invariance(scale):
    # scaling by a power of two is exact in floating point, so every comparison is preserved
    a = np.random.default_rng(5).integers(0, 256, (20, 20)).astype(float)
    cfg = LbpConfig(P=12, R=2)
    np.testing.assert_array_equal(extract_histogram(img(a * scale), cfg).counts, extract_histogram(img(a), cfg).counts)


def test_global_offset_with_integer_values_on_grid():
    # with R=1, P=4 every sample is an exact pixel read, so adding a constant changes nothing
    a = np.random.default_rng(6).integers(0, 100, (15, 15)).astype(float)
    cfg = LbpConfig(P=4, R=1)
    np.testing.assert_array_equal(extract_histogram(img(a + 37), cfg).counts, extract_histogram(img(a), cfg).counts)


# ---------------------------------------------------------------- dictionary

def hist_from(counts, channel=Channel.H, cfg=LbpConfig(P=4, R=1)):
    c = np.zeros(cfg.n_bins, dtype=np.int64)
    c[: len(counts)] = counts
    return PatternHistogram(c, Channel(channel), cfg)


def test_select_example():
    assert select_dominant(np.array([5, 50, 15, 30]), 0.9) == [1, 3, 2]
    assert select_dominant(np.array([50, 30, 15, 5]), 0.8) == [0, 1]


def test_ties_by_index():
    assert select_dominant(np.array([0, 4, 4, 4, 4]), 0.5) == [1, 2]


def test_theta_one_covers_nonzero():
    d = build_dictionary([hist_from([3, 0, 1, 0, 0, 2]), hist_from([0, 0, 1, 0, 0, 0, 0, 5])], 1.0)
    assert sorted(d.selected) == [0, 2, 5, 7]


def test_build_sums_histograms():
    d = build_dictionary([hist_from([25, 10, 10, 5]), hist_from([25, 20, 5])], 0.9)
    assert d.selected == (0, 1, 2) and d.M == 3


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 30), min_size=16, max_size=16), min_size=1, max_size=6),
       st.sampled_from([0.5, 0.85, 0.90, 0.95, 1.0]))
def test_selection_matches_brute_force(hists, theta):
    summed = np.sum(hists, axis=0)
    assume(summed.sum() > 0)
    d = build_dictionary([hist_from(h) for h in hists], theta)
    assert list(d.selected) == oracles.brute_force_selection(summed, theta)
    mass = summed[list(d.selected)].sum() / summed.sum()
    assert mass >= theta
    assert summed[list(d.selected[:-1])].sum() / summed.sum() < theta


def test_dictionary_errors():
    with pytest.raises(ValueError):
        build_dictionary([hist_from([0, 0])], 0.9)
    with pytest.raises(ValueError):
        build_dictionary([], 0.9)
    with pytest.raises(ValueError):
        build_dictionary([hist_from([1])], 0.0)
    with pytest.raises(LayoutError):
        build_dictionary([hist_from([1]), hist_from([1], Channel.V)], 0.9)
    with pytest.raises(LayoutError):
        build_dictionary([hist_from([1]), hist_from([1], cfg=LbpConfig(P=4, R=1, variant="LBP"))], 0.9)


def test_dictionary_json_round_trip(tmp_path):
    d = DominantPatternDictionary(Channel.V, LbpConfig(P=8, R=1), 0.9, (5, 3, 200))
    d.save(tmp_path / "d.json")
    e = DominantPatternDictionary.load(tmp_path / "d.json")
    assert e == d and e.digest == d.digest
    doc = json.loads((tmp_path / "d.json").read_text())
    assert doc["selected"] == [5, 3, 200] and doc["channel"] == "V"
    other = DominantPatternDictionary(Channel.V, LbpConfig(P=8, R=1), 0.9, (3, 5, 200))
    assert other.digest != d.digest


# ---------------------------------------------------------------- projection

def test_project_examples():
    d = DominantPatternDictionary(Channel.H, LbpConfig(P=4, R=1), 0.9, (2, 0))
    np.testing.assert_allclose(project(hist_from([2, 0, 8]), d), [0.8, 0.2])
    z = project(hist_from([0, 7, 0]), d)
    assert z.tolist() == [0.0, 0.0]
    assert project(hist_from([3, 0, 1]), d).sum() == pytest.approx(1.0)


def test_project_mismatch():
    d = DominantPatternDictionary(Channel.H, LbpConfig(P=4, R=1), 0.9, (0,))
    with pytest.raises(LayoutError):
        project(hist_from([1], Channel.V), d)
    with pytest.raises(LayoutError):
        project(hist_from([1], cfg=LbpConfig(P=4, R=1, variant="LBP")), d)


def test_assemble_layout():
    cfg = LbpConfig(P=16, R=3)
    dh = DominantPatternDictionary(Channel.H, cfg, 0.9, tuple(range(1464)))
    dv = DominantPatternDictionary(Channel.V, cfg, 0.9, tuple(range(1164)))
    vh = np.full(1464, 1 / 1464)
    vv = np.zeros(1164)
    vv[:4] = 0.25
    fv = assemble_feature([(dh, vh), (dv, vv)])
    assert len(fv.values) == 2628
    assert fv.values.sum() == pytest.approx(2.0)
    assert [s.length for s in fv.layout] == [1464, 1164]
    assert assemble_feature([(dh, vh), (dv, vv)], fv.layout).layout_hash == fv.layout_hash
    with pytest.raises(LayoutError):
        assemble_feature([(dv, vv), (dh, vh)])
    with pytest.raises(LayoutError):
        assemble_feature([(dh, vh)], fv.layout)
    with pytest.raises(LayoutError):
        assemble_feature([(dh, vh[:-1])])
    dg = DominantPatternDictionary(Channel.GRAY, cfg, 0.9, (1, 2, 3))
    assert len(assemble_feature([(dg, np.zeros(3))]).values) == 3
