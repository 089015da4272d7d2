import math

import numpy as np
import pytest

from flowdub import align
from flowdub.errors import ConfigError, ShapeError
from flowdub.rng import Rng

from oracles import brute_force_mas


# ---------------------------------------------------------------- positives


def test_positives_expansion():
    pairs = align.positives_from_durations([2, 3]).pairs
    assert pairs == ((0, 0), (1, 0), (2, 1), (3, 1), (4, 1))


def test_positives_single():
    assert align.positives_from_durations([1]).pairs == ((0, 0),)


def test_positives_cumulative_boundaries():
    pairs = dict(align.positives_from_durations([3, 1, 2]).pairs)
    assert pairs[4] == 2
    assert pairs == {0: 0, 1: 0, 2: 0, 3: 1, 4: 2, 5: 2}


def test_positives_reject_bad_durations():
    with pytest.raises(ShapeError):
        align.positives_from_durations([2, 0])
    with pytest.raises(ShapeError):
        align.positives_from_durations([])


def test_frame_labels_roundtrip():
    pos = align.positives_from_durations([1, 2, 1])
    assert align.frame_labels(pos).tolist() == [0, 1, 1, 2]


# --------------------------------------------------------------- similarity


def test_similarity_orthonormal_rows():
    z = np.eye(3)
    assert np.array_equal(align.similarity(z, z), np.eye(3))


def test_similarity_gram_symmetry():
    z = Rng(1).normal_matrix(4, 3)
    sim = align.similarity(z, z)
    assert np.array_equal(sim, sim.T)


def test_similarity_hand_computed():
    z_m = np.array([[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]])
    z_p = np.array([[2.0, 1.0], [-1.0, 0.0]])
    sim = align.similarity(z_m, z_p)
    expected = np.array([[4.0, -1.0], [-1.0, 0.0], [6.5, -3.0]])
    assert np.array_equal(sim, expected)


def test_similarity_dim_mismatch():
    with pytest.raises(ShapeError):
        align.similarity(np.zeros((2, 3)), np.zeros((2, 4)))


# ------------------------------------------------------------------ infonce


def test_infonce_uniform_row_is_log_n():
    sim = np.full((1, 3), 0.7)
    pos = align.PositivePairs(((0, 1),))
    loss = align.infonce_mp(sim, pos, tau=1.0)
    assert loss == pytest.approx(math.log(3.0), abs=1e-12)


def test_infonce_saturates_to_zero():
    sim = np.array([[0.0, 50.0, 0.0]])
    pos = align.PositivePairs(((0, 1),))
    assert align.infonce_mp(sim, pos, tau=1.0) < 1e-6


def test_infonce_2x2_closed_form():
    sim = np.array([[2.0, 0.0], [0.0, 2.0]])
    pos = align.PositivePairs(((0, 0), (1, 1)))
    expected = 2.0 * math.log(1.0 + math.exp(-2.0))
    assert align.infonce_mp(sim, pos, tau=1.0) == pytest.approx(expected, abs=1e-9)
    assert align.infonce_pm(sim, pos, tau=1.0) == pytest.approx(expected, abs=1e-9)


def test_infonce_transpose_duality_on_symmetric_squares():
    rng = Rng(4)
    for _ in range(20):
        a = rng.normal_matrix(3, 3)
        sim = a + a.T
        pos = align.PositivePairs(((0, 0), (1, 1), (2, 2)))
        l_mp = align.infonce_mp(sim, pos, tau=0.5)
        l_pm = align.infonce_pm(sim, pos, tau=0.5)
        assert l_mp == pytest.approx(l_pm, rel=1e-12)


def test_infonce_pm_all_keys_positive_is_zero():
    # a single phoneme owning every frame has numerator == denominator
    sim = Rng(5).normal_matrix(2, 1)
    pos = align.positives_from_durations([2])
    assert align.infonce_pm(sim, pos, tau=0.3) == pytest.approx(0.0, abs=1e-12)


def test_infonce_rejects_bad_tau_and_missing_positive():
    sim = np.zeros((2, 2))
    pos = align.positives_from_durations([1, 1])
    with pytest.raises(ConfigError):
        align.infonce_mp(sim, pos, tau=0.0)
    lonely = align.PositivePairs(((0, 0),))
    with pytest.raises(ShapeError):
        align.infonce_mp(sim, lonely, tau=1.0)
    with pytest.raises(ShapeError):
        align.infonce_pm(sim, lonely, tau=1.0)


def test_infonce_nonnegative_and_bounded():
    # with one positive per query, the loss is at most |queries| * ln(keys)
    # whenever every positive tops its row
    rng = Rng(6)
    for _ in range(30):
        sim = rng.normal_matrix(4, 3)
        labels = align.frame_labels(align.positives_from_durations([2, 1, 1]))
        for i, j in enumerate(labels):
            sim[i, j] = sim[i].max() + 0.1
        pos = align.positives_from_durations([2, 1, 1])
        loss = align.infonce_mp(sim, pos, tau=0.7)
        assert 0.0 <= loss <= 4 * math.log(3) + 1e-12


def test_dual_loss_mean():
    assert align.dual_loss(0.0, 0.0) == 0.0
    assert align.dual_loss(2.0, 4.0) == 3.0
    with pytest.raises(ValueError):
        align.dual_loss(float("nan"), 1.0)


def test_dual_loss_symmetric_square_equals_components():
    rng = Rng(7)
    a = rng.normal_matrix(3, 3)
    z = a + a.T  # symmetric similarity via z_m = z_p
    pos = align.PositivePairs(((0, 0), (1, 1), (2, 2)))
    l_mp = align.infonce_mp(z, pos, tau=0.2)
    l_pm = align.infonce_pm(z, pos, tau=0.2)
    assert align.dual_loss(l_mp, l_pm) == pytest.approx(l_mp, rel=1e-12)


def test_dual_contrastive_gradients_match_finite_differences():
    rng = Rng(8)
    for _ in range(5):
        z_m = rng.normal_matrix(4, 3)
        z_p = rng.normal_matrix(2, 3)
        pos = align.positives_from_durations([3, 1])
        res = align.dual_contrastive(z_m, z_p, pos, tau=0.4)
        eps = 1e-6
        for target, grad in ((z_m, res.grad_z_m), (z_p, res.grad_z_p)):
            numeric = np.zeros_like(target)
            flat = target.reshape(-1)
            nflat = numeric.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + eps
                hi = align.dual_contrastive(z_m, z_p, pos, tau=0.4).l_dua
                flat[k] = orig - eps
                lo = align.dual_contrastive(z_m, z_p, pos, tau=0.4).l_dua
                flat[k] = orig
                nflat[k] = (hi - lo) / (2 * eps)
            assert np.allclose(grad, numeric, rtol=1e-5, atol=1e-8)


# ---------------------------------------------------------------------- mas


def test_mas_identity_2x2():
    tab, path = align.mas(np.eye(2))
    assert tab.tolist() == [1, 1]
    assert path.tolist() == [0, 1]


def test_mas_single_phoneme_takes_all():
    tab, path = align.mas(Rng(9).normal_matrix(5, 1))
    assert tab.tolist() == [5]
    assert path.tolist() == [0] * 5


def test_mas_infeasible_rejected():
    with pytest.raises(ShapeError):
        align.mas(np.zeros((2, 3)))


def test_mas_exhaustive_binary_4x3():
    # every 4x3 matrix with entries in {0, 1} against the oracle
    for bits in range(2**12):
        sim = np.array(
            [(bits >> k) & 1 for k in range(12)], dtype=np.float64
        ).reshape(4, 3)
        tab, path = align.mas(sim)
        score, otab, opath = brute_force_mas(sim)
        assert np.array_equal(tab, otab), f"bits={bits}"
        assert np.array_equal(path, opath), f"bits={bits}"
        assert sum(sim[i, path[i]] for i in range(4)) == score


def test_mas_random_integer_grid_all_shapes():
    rng = Rng(10)
    for l_t in range(1, 5):
        for l_v in range(l_t, 8):
            for _ in range(40):
                sim = rng.integers(0, 3, l_v * l_t).reshape(l_v, l_t) * 1.0
                tab, path = align.mas(sim)
                score, otab, opath = brute_force_mas(sim)
                assert np.array_equal(tab, otab)
                assert np.array_equal(path, opath)


def test_mas_tab_invariants_randomized():
    rng = Rng(11)
    for _ in range(300):
        l_t = rng.integer(1, 5)
        l_v = rng.integer(l_t, l_t + 8)
        sim = rng.normal_matrix(l_v, l_t)
        tab, path = align.mas(sim)
        assert tab.sum() == l_v
        assert tab.min() >= 1
        assert np.all(np.diff(path) >= 0)
        assert path[0] == 0 and path[-1] == l_t - 1


def test_mas_shift_invariance():
    rng = Rng(12)
    for _ in range(25):
        sim = rng.normal_matrix(6, 3)
        _, path = align.mas(sim)
        _, shifted = align.mas(sim + 4.2)
        assert np.array_equal(path, shifted)


# ----------------------------------------------------------------- upsample


def test_upsample_repeats_rows():
    feats = np.array([[1.0, 10.0], [2.0, 20.0]])
    out = align.upsample(feats, [2, 3])
    expected = np.array(
        [[1.0, 10.0], [1.0, 10.0], [2.0, 20.0], [2.0, 20.0], [2.0, 20.0]]
    )
    assert np.array_equal(out, expected)


def test_upsample_identity_with_unit_tab():
    feats = Rng(13).normal_matrix(4, 2)
    assert np.array_equal(align.upsample(feats, [1, 1, 1, 1]), feats)


def test_upsample_after_mas_has_frame_count_rows():
    rng = Rng(14)
    for _ in range(20):
        z_m = rng.normal_matrix(7, 4)
        z_p = rng.normal_matrix(3, 4)
        tab, _ = align.mas(align.similarity(z_m, z_p))
        assert align.upsample(z_p, tab).shape == (7, 4)


def test_upsample_validates_tab():
    with pytest.raises(ShapeError):
        align.upsample(np.zeros((2, 2)), [1])
    with pytest.raises(ShapeError):
        align.upsample(np.zeros((2, 2)), [0, 2])


# ------------------------------------------------------------ lip attention


def test_lip_attention_single_phoneme_copies_value():
    z_p = np.array([[3.0, -1.0]])
    z_m = Rng(15).normal_matrix(4, 2)
    sim = align.similarity(z_m, z_p)
    out = align.lip_attention(z_m, z_p, sim)
    assert np.allclose(out, np.tile(z_p, (4, 1)), atol=1e-15)


def test_lip_attention_uniform_row_averages_values():
    z_p = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    z_m = np.zeros((2, 2))
    sim = np.zeros((2, 3))
    out = align.lip_attention(z_m, z_p, sim)
    assert np.allclose(out, np.tile(z_p.mean(axis=0), (2, 1)), atol=1e-15)


def test_lip_attention_hand_softmax():
    # logits after the 1/sqrt(d) scaling are [[ln2, 0], [0, ln2]], so the
    # first row mixes the basis values with weights (2/3, 1/3)
    d = 2
    sim = np.sqrt(d) * np.array([[np.log(2.0), 0.0], [0.0, np.log(2.0)]])
    z_p = np.eye(2)
    z_m = np.zeros((2, 2))
    out = align.lip_attention(z_m, z_p, sim)
    assert np.allclose(out[0], [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)
    assert np.allclose(out[1], [1.0 / 3.0, 2.0 / 3.0], atol=1e-12)


def test_lip_attention_rows_sum_to_one():
    rng = Rng(16)
    z_m = rng.normal_matrix(5, 4)
    z_p = rng.normal_matrix(3, 4)
    sim = align.similarity(z_m, z_p)
    weights = align.row_softmax(sim / 2.0)
    assert np.allclose(weights.sum(axis=1), 1.0, atol=1e-12)


def test_lip_attention_head_validation():
    z_m, z_p = np.zeros((2, 4)), np.zeros((3, 4))
    sim = np.zeros((2, 3))
    align.lip_attention(z_m, z_p, sim, heads=2)
    with pytest.raises(ConfigError):
        align.lip_attention(z_m, z_p, sim, heads=3)
