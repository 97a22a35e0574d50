import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fuzzyevidence.context import (
    DEFAULT_W_GRID,
    OFFSETS,
    OUTLIER_CODE,
    Classification,
    ContextConfig,
    DegenerateEvidence,
    Method,
    Neighborhood,
    classify_image,
    classify_noncontextual_plane,
    classify_plane,
    decide_neighborhood,
    grid_search_w,
    grid_search_w_plane,
    method1,
    method2,
    method2_bpa,
    method2_global,
    method2_iterated,
    method3,
    method3_bpa,
    method4,
    method4_bpa,
    method4_unweighted,
)
from fuzzyevidence.evidence import Bpa, full_set
from fuzzyevidence.raster_io import GroundTruth, Raster
from fuzzyevidence.rulebase import OUTLIER, Rulebase, classify_noncontextual

from oracles import subsets

ALL_METHODS = [ContextConfig(Method.M1), ContextConfig(Method.M2), ContextConfig(Method.M3), ContextConfig(Method.M4, 1.0), ContextConfig(Method.M4, 0.35)]


def nb(center, neighbors):
    return Neighborhood(center, tuple(neighbors))


def label_vector_arrays(c):
    # label vectors are either 0 or at least epsilon per component
    comp = st.one_of(st.just(0.0), st.floats(0.01, 1.0))
    return st.lists(comp, min_size=c, max_size=c).map(np.array)


@st.composite
def neighborhoods(draw, c=None, allow_absent=True):
    c = c or draw(st.integers(2, 4))
    center = draw(label_vector_arrays(c))
    nbrs = []
    for _ in range(8):
        if allow_absent and draw(st.booleans()) and draw(st.booleans()):
            nbrs.append(None)
        else:
            nbrs.append(draw(label_vector_arrays(c)))
    return nb(center, nbrs)


def random_plane(rng, H, W, c, zero_fraction=0.3):
    plane = rng.uniform(0.01, 1.0, size=(H, W, c))
    plane[rng.random((H, W, c)) < zero_fraction] = 0.0
    return plane


def generic_map(plane, config):
    H, W = plane.shape[:2]
    return np.array([[decide_neighborhood(Neighborhood.from_plane(plane, r, c), config) for c in range(W)] for r in range(H)])


class TestNeighborhood:
    def test_needs_eight_slots(self):
        with pytest.raises(ValueError):
            Neighborhood(np.zeros(2), (None,) * 7)

    def test_lengths_must_agree(self):
        with pytest.raises(ValueError):
            nb([0.5, 0.5], [[1.0, 0.0, 0.0]] + [None] * 7)

    def test_from_plane_corner(self):
        plane = np.arange(2 * 3 * 2, dtype=float).reshape(2, 3, 2)
        n = Neighborhood.from_plane(plane, 0, 0)
        present = [off for off, v in zip(OFFSETS, n.neighbors) if v is not None]
        assert present == [(0, 1), (1, 0), (1, 1)]
        np.testing.assert_array_equal(n.neighbors[4], plane[0, 1])

    def test_config_rejects_w_out_of_range(self):
        with pytest.raises(ValueError):
            ContextConfig(Method.M4, 1.5)
        assert ContextConfig("m3").method is Method.M3


class TestMethod1:
    def test_identical_vectors(self):
        v = np.array([0.2, 0.6, 0.4])
        assert method1(nb(v, [v] * 8)) == 1

    def test_center_is_outvoted(self):
        assert method1(nb([1.0, 0.0], [[0.0, 1.0]] * 8)) == 1

    def test_all_zero(self):
        assert method1(nb([0.0, 0.0], [[0.0, 0.0]] * 8)) == OUTLIER

    def test_absent_neighbors_are_excluded_from_the_mean(self):
        # with divisor 9 the mean would still pick class 0 here; the point is no crash
        assert method1(nb([0.9, 0.1], [[0.0, 0.5]] + [None] * 7)) == 0

    @given(neighborhoods(allow_absent=False), st.permutations(range(9)))
    def test_permutation_invariant(self, n, perm):
        vecs = [n.center] + list(n.neighbors)
        shuffled = [vecs[i] for i in perm]
        assert method1(nb(shuffled[0], shuffled[1:])) == method1(n)

    @given(neighborhoods(), st.floats(0.01, 1.0))
    def test_scale_invariant(self, n, lam):
        scaled = nb(n.center * lam, [None if v is None else v * lam for v in n.neighbors])
        assert method1(scaled) == method1(n)


class TestMethod2:
    def test_bpa_example(self):
        m = method2_bpa([0.8, 0.2], [0.6, 0.4])
        np.testing.assert_allclose(m.singletons(), [0.7, 0.3])

    def test_bpa_uniform(self):
        np.testing.assert_allclose(method2_bpa([0.5] * 3, [0.5] * 3).singletons(), [1 / 3] * 3)

    def test_bpa_degenerate(self):
        with pytest.raises(DegenerateEvidence):
            method2_bpa([0.0, 0.0], [0.0, 0.0])

    def test_eight_equal_factors(self):
        # center and neighbours chosen so each pairwise BPA is (0.7, 0.3)
        g = method2_global(nb([0.7, 0.3], [[0.7, 0.3]] * 8))
        assert g[0] == pytest.approx(0.7**8 / (0.7**8 + 0.3**8), abs=1e-12)
        assert g[0] == pytest.approx(0.99886, abs=1e-5)

    @given(neighborhoods())
    def test_closed_form_matches_iterated_combination(self, n):
        try:
            closed = method2_global(n)
        except Exception:
            closed = "conflict"
        try:
            iterated = method2_iterated(n)
        except Exception:
            iterated = "conflict"
        if closed is None or iterated is None:
            assert closed is None and iterated is None
        elif isinstance(closed, str) or isinstance(iterated, str):
            assert closed == iterated
        else:
            np.testing.assert_allclose(closed, iterated.singletons(), atol=1e-9)

    def test_all_degenerate_falls_back(self):
        assert method2(nb([0.0, 0.0], [[0.0, 0.0]] * 8)) == OUTLIER
        assert method2(nb([0.0, 0.4], [None] * 8)) == 1

    def test_conflict_falls_back(self):
        # neighbour pairs support disjoint classes: products vanish everywhere
        n = nb([0.0, 0.0, 0.0], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] + [None] * 6)
        assert method2(n) == OUTLIER

    @given(label_vector_arrays(3))
    def test_self_agreement(self, v):
        assert method2(nb(v, [v] * 8)) == classify_noncontextual(v)


def method3_oracle(center, neighbor):
    """Singletons get a_k^i + a_k^0, pairs the mean of the two cross sums, all renormalized."""
    a0, ai = np.asarray(center, float), np.asarray(neighbor, float)
    c = len(a0)
    raw = {}
    for s in subsets(c):
        if len(s) == 1:
            (k,) = s
            raw[s] = ai[k] + a0[k]
        elif len(s) == 2:
            l, m = sorted(s)
            raw[s] = ((ai[l] + a0[m]) + (ai[m] + a0[l])) / 2
    total = sum(raw.values())
    return {s: v / total for s, v in raw.items() if v > 0}


class TestMethod3:
    def test_bpa_example(self):
        m = method3_bpa([0.8, 0.2], [0.6, 0.4])
        assert m[[0]] == pytest.approx(1.4 / 3)
        assert m[[1]] == pytest.approx(0.2)
        assert m[[0, 1]] == pytest.approx(1 / 3)

    def test_bpa_concentrated(self):
        m = method3_bpa([1.0, 0.0], [1.0, 0.0])
        assert m[[0]] == pytest.approx(2 / 3) and m[[1]] == 0.0 and m[[0, 1]] == pytest.approx(1 / 3)

    def test_bpa_uniform_symmetry(self):
        m = method3_bpa([0.4] * 3, [0.4] * 3)
        assert len({round(m[[k]], 12) for k in range(3)}) == 1
        assert len({round(m[[a, b]], 12) for a in range(3) for b in range(a + 1, 3)}) == 1

    def test_bpa_degenerate(self):
        with pytest.raises(DegenerateEvidence):
            method3_bpa([0.0, 0.0, 0.0], [0.0, 0.0, 0.0])

    @given(st.integers(2, 5).flatmap(lambda c: st.tuples(label_vector_arrays(c), label_vector_arrays(c))))
    def test_bpa_matches_oracle(self, pair):
        a0, ai = pair
        if not (a0 + ai).any():
            return
        got = {frozenset(k for k in range(len(a0)) if mask >> k & 1): v for mask, v in method3_bpa(a0, ai).masses.items()}
        want = method3_oracle(a0, ai)
        for s in set(got) | set(want):
            assert abs(got.get(s, 0.0) - want.get(s, 0.0)) < 1e-12

    def test_pair_mass_ties_go_to_lowest_index(self):
        # symmetric doubleton mass and equal singletons: pignistic ties
        assert method3(nb([0.5, 0.5], [[0.5, 0.5]] * 8)) == 0

    @given(label_vector_arrays(3))
    def test_self_agreement(self, v):
        assert method3(nb(v, [v] * 8)) == classify_noncontextual(v)

    def test_all_degenerate_is_outlier(self):
        assert method3(nb([0.0, 0.0], [[0.0, 0.0]] * 8)) == OUTLIER


class TestMethod4:
    def test_bpa_full_weight(self):
        m = method4_bpa([0.9, 0.1], 1.0)
        assert m[[0]] == pytest.approx(0.9) and m[full_set(2)] == pytest.approx(0.1)

    def test_bpa_half_weight(self):
        m = method4_bpa([0.9, 0.1], 0.5)
        assert m[[0]] == pytest.approx(0.45) and m[full_set(2)] == pytest.approx(0.55)

    def test_center_ignores_w(self):
        assert method4_bpa([0.9, 0.1], 0.5, is_center=True)[[0]] == pytest.approx(0.9)

    def test_zero_vector_is_vacuous(self):
        assert method4_bpa([0.0, 0.0], 1.0) == Bpa.vacuous(2)

    def test_saturated_support(self):
        assert method4_bpa([1.0, 0.0], 1.0).masses == {1: 1.0}

    def test_w_zero_is_noncontextual(self):
        assert method4(nb([0.6, 0.4], [[0.0, 1.0]] * 8), 0.0) == 0

    def test_neighbors_win_over_a_vacuous_center(self):
        assert method4(nb([0.0, 0.0], [[0.0, 0.5]] * 8), 1.0) == 1

    def test_everything_vacuous(self):
        assert method4(nb([0.0, 0.0], [[0.0, 0.0]] * 8), 1.0) == OUTLIER
        assert method4(nb([0.0, 0.0], [[0.0, 0.9]] * 8), 0.0) == OUTLIER

    def test_full_conflict_falls_back(self):
        # two saturated neighbours on different classes
        n = nb([0.0, 0.0, 0.3], [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] + [None] * 6)
        assert method4(n, 1.0) == 2

    @given(neighborhoods(), st.permutations(range(8)), st.floats(0, 1))
    def test_neighbor_permutation_invariant(self, n, perm, w):
        shuffled = nb(n.center, [n.neighbors[i] for i in perm])
        assert method4(shuffled, w) == method4(n, w)

    @given(neighborhoods())
    def test_full_weight_matches_unweighted(self, n):
        assert method4(n, 1.0) == method4_unweighted(n)


class TestPlanes:
    @pytest.mark.parametrize("config", ALL_METHODS, ids=lambda c: f"{c.method.value}-w{c.w}")
    def test_vectorized_matches_generic(self, config):
        rng = np.random.default_rng(21)
        for H, W, c in [(9, 11, 2), (7, 6, 3), (5, 5, 4)]:
            plane = random_plane(rng, H, W, c)
            fast = classify_plane(plane, config, block_rows=3).labels
            np.testing.assert_array_equal(fast, generic_map(plane, config))

    @pytest.mark.parametrize("config", ALL_METHODS, ids=lambda c: f"{c.method.value}-w{c.w}")
    @pytest.mark.parametrize("shape", [(1, 1), (1, 7), (7, 1), (2, 2), (3, 2)])
    def test_tiny_rasters(self, config, shape):
        rng = np.random.default_rng(sum(shape))
        plane = random_plane(rng, *shape, 3)
        np.testing.assert_array_equal(classify_plane(plane, config).labels, generic_map(plane, config))

    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4), st.integers(2, 3)), elements=st.sampled_from([0.0, 0.01, 0.3, 0.5, 1.0])))
    def test_fuzzed_planes(self, plane):
        for config in ALL_METHODS:
            np.testing.assert_array_equal(classify_plane(plane, config).labels, generic_map(plane, config))

    @pytest.mark.parametrize("config", ALL_METHODS, ids=lambda c: f"{c.method.value}-w{c.w}")
    def test_threads_do_not_change_output(self, config):
        plane = random_plane(np.random.default_rng(5), 70, 40, 3)
        a = classify_plane(plane, config, threads=1, block_rows=8)
        b = classify_plane(plane, config, threads=4, block_rows=8)
        np.testing.assert_array_equal(a.labels, b.labels)
        assert a.fallbacks == b.fallbacks

    @pytest.mark.parametrize("config", ALL_METHODS, ids=lambda c: f"{c.method.value}-w{c.w}")
    def test_salt_pixel_is_smoothed(self, config):
        # the odd pixel is less sure of itself than its neighbours are
        plane = np.tile([0.9, 0.1, 0.05], (5, 5, 1))
        plane[2, 2] = [0.4, 0.6, 0.0]
        assert (classify_plane(plane, config).labels == 0).all()

    @pytest.mark.parametrize("config", ALL_METHODS, ids=lambda c: f"{c.method.value}-w{c.w}")
    def test_constant_plane(self, config):
        plane = np.tile([0.2, 0.7, 0.0], (6, 4, 1))
        assert (classify_plane(plane, config).labels == 1).all()

    def test_w_zero_plane_is_noncontextual(self):
        plane = random_plane(np.random.default_rng(8), 20, 20, 4)
        np.testing.assert_array_equal(
            classify_plane(plane, ContextConfig(Method.M4, 0.0)).labels, classify_noncontextual_plane(plane).labels
        )

    def test_fallbacks_are_counted(self):
        plane = np.zeros((3, 3, 2))
        result = classify_plane(plane, ContextConfig(Method.M2))
        assert result.fallbacks == 9 and (result.labels == OUTLIER).all()

    def test_encoded_map(self):
        cls = Classification(np.array([[0, OUTLIER], [2, 1]]))
        np.testing.assert_array_equal(cls.encoded(), [[0, OUTLIER_CODE], [2, 1]])
        assert cls.encoded().dtype == np.uint8


class TestClassifyImage:
    def _setup(self):
        rb = Rulebase([[0.0], [100.0]], [[20.0], [20.0]], [0, 1], 2)
        data = np.zeros((1, 6, 6))
        data[0, :, 3:] = 100.0
        return Raster(data.astype(np.uint8)), rb

    def test_noncontextual(self):
        raster, rb = self._setup()
        labels = classify_image(raster, rb, None).labels
        assert (labels[:, :3] == 0).all() and (labels[:, 3:] == 1).all()

    def test_band_mismatch(self):
        raster, _ = self._setup()
        rb = Rulebase([[0.0, 0.0]], [[1.0, 1.0]], [0], 1)
        with pytest.raises(ValueError, match="bands"):
            classify_image(raster, rb, ContextConfig())


class TestGridSearch:
    def _scene(self):
        plane = random_plane(np.random.default_rng(2), 12, 12, 2, zero_fraction=0.0)
        truth = GroundTruth(np.random.default_rng(3).integers(0, 2, size=(12, 12)).astype(np.uint8), 2)
        return plane, truth

    def test_single_value_grid(self):
        plane, truth = self._scene()
        result = grid_search_w_plane(plane, truth, (2, 2, 8, 8), [1.0])
        assert result.best_w == 1.0 and len(result.curve) == 1

    def test_empty_grid(self):
        plane, truth = self._scene()
        with pytest.raises(ValueError, match="empty"):
            grid_search_w_plane(plane, truth, (0, 0, 4, 4), [])

    @pytest.mark.parametrize("rect", [(8, 8, 5, 5), (-1, 0, 3, 3), (0, 0, 0, 3)])
    def test_rect_outside(self, rect):
        plane, truth = self._scene()
        with pytest.raises(ValueError, match="outside"):
            grid_search_w_plane(plane, truth, rect)

    def test_curve_matches_direct_classification(self):
        plane, truth = self._scene()
        rect = (3, 2, 6, 7)
        result = grid_search_w_plane(plane, truth, rect, [0.2, 0.6, 1.0])
        for w, err in result.curve:
            pred = classify_plane(plane, ContextConfig(Method.M4, w)).labels[3:9, 2:9]
            assert err == pytest.approx(np.mean(pred != truth.labels[3:9, 2:9]))

    def test_ties_prefer_the_smaller_w(self):
        plane = np.tile([0.9, 0.1], (5, 5, 1))
        truth = GroundTruth(np.zeros((5, 5), dtype=np.uint8), 2)
        assert grid_search_w_plane(plane, truth, (0, 0, 5, 5), [0.7, 0.3, 1.0]).best_w == 0.3

    def test_unlabeled_rect(self):
        plane, _ = self._scene()
        truth = GroundTruth(np.full((12, 12), 255, dtype=np.uint8), 2)
        with pytest.raises(ValueError, match="labeled"):
            grid_search_w_plane(plane, truth, (0, 0, 4, 4))

    def test_default_grid(self):
        assert DEFAULT_W_GRID[0] == 0.05 and DEFAULT_W_GRID[-1] == 1.0 and len(DEFAULT_W_GRID) == 20

    def test_csv(self, tmp_path, small_scene, small_model):
        raster, truth = small_scene
        result = grid_search_w(raster, truth, small_model[0], (0, 0, 20, 20), [0.5, 1.0])
        result.write_csv(tmp_path / "w.csv")
        lines = (tmp_path / "w.csv").read_text().splitlines()
        assert lines[0] == "w,error" and len(lines) == 3 and lines[1].startswith("0.5,")
