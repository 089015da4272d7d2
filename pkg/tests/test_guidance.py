import numpy as np
import pytest

from flowdub import conditioning as cond, flow, guidance
from flowdub.errors import ShapeError
from flowdub.rng import Rng


def test_satl_identity_is_fixed_point_bitwise():
    mu = Rng(1).normal_matrix(5, 3)
    out = guidance.satl_transform(mu, guidance.identity_style(3))
    assert np.array_equal(out, mu)


def test_satl_hand_evaluation():
    mu = np.array([[1.0, 2.0]])
    style = guidance.StyleAffine(
        gamma1=np.array([2.0, 2.0]),
        beta1=np.array([1.0, 1.0]),
        gamma2=np.array([3.0, 3.0]),
        beta2=np.array([-1.0, -1.0]),
    )
    assert np.array_equal(guidance.satl_transform(mu, style), [[8.0, 14.0]])


def test_satl_composition_is_affine():
    # two chained transforms equal one fused affine with composed coefficients
    rng = Rng(2)
    d = 4
    mu = rng.normal_matrix(6, d)
    s1 = guidance.StyleAffine(*[rng.normals(d) for _ in range(4)])
    s2 = guidance.StyleAffine(*[rng.normals(d) for _ in range(4)])
    twice = guidance.satl_transform(guidance.satl_transform(mu, s1), s2)
    # s1 expands to a*mu + b with a = g2*g1, b = g2*b1 + beta2
    a1 = s1.gamma2 * s1.gamma1
    b1 = s1.gamma2 * s1.beta1 + s1.beta2
    a2 = s2.gamma2 * s2.gamma1
    b2 = s2.gamma2 * s2.beta1 + s2.beta2
    fused = guidance.StyleAffine(
        gamma1=a2 * a1, beta1=a2 * b1 + b2,
        gamma2=np.ones(d), beta2=np.zeros(d),
    )
    assert np.allclose(twice, guidance.satl_transform(mu, fused), atol=1e-12)


def test_satl_dim_validation():
    with pytest.raises(ShapeError):
        guidance.satl_transform(np.zeros((2, 3)), guidance.identity_style(2))


def test_style_head_identity_init_is_noop():
    head = guidance.init_style_head(feature_dim=3, style_dim=5)
    affine = guidance.apply_style_head(head, Rng(3).normals(5))
    mu = Rng(4).normal_matrix(4, 3)
    assert np.array_equal(guidance.satl_transform(mu, affine), mu)


def test_style_head_maps_after_weight_change():
    head = guidance.init_style_head(feature_dim=2, style_dim=1)
    head.weight[0, 0] = 1.0  # gamma1[0] now depends on the style input
    affine = guidance.apply_style_head(head, np.array([0.5]))
    assert affine.gamma1[0] == 1.5
    assert affine.gamma1[1] == 1.0
    assert np.array_equal(affine.beta1, np.zeros(2))


def test_cfg_alpha_zero_returns_cond_exactly():
    rng = Rng(5)
    v_cond = rng.normal_matrix(3, 2)
    v_uncond = rng.normal_matrix(3, 2)
    out = guidance.cfg_field(v_cond, v_uncond, 0.0)
    assert np.array_equal(out, v_cond)
    assert out is not v_cond


def test_cfg_equal_fields_for_every_alpha():
    v = Rng(6).normal_matrix(2, 4)
    for alpha in (0.0, 0.2, 0.4, 0.6, 0.8, 3.0):
        assert np.array_equal(guidance.cfg_field(v, v.copy(), alpha), v)


def test_cfg_hand_arithmetic():
    out = guidance.cfg_field([[2.0]], [[1.0]], 0.5)
    assert np.array_equal(out, [[2.5]])


def test_cfg_linearity_in_alpha_exact():
    rng = Rng(7)
    v_cond = rng.normal_matrix(4, 3)
    v_uncond = rng.normal_matrix(4, 3)
    for alpha in (0.0, 0.2, 0.4, 0.6, 0.8):
        tilde = guidance.cfg_field(v_cond, v_uncond, alpha)
        assert np.array_equal(tilde, v_cond + alpha * (v_cond - v_uncond))


def test_cfg_rejects_negative_alpha_and_shape_mismatch():
    with pytest.raises(ValueError):
        guidance.cfg_field([[1.0]], [[1.0]], -0.1)
    with pytest.raises(ShapeError):
        guidance.cfg_field(np.zeros((1, 2)), np.zeros((2, 1)), 0.5)


def test_bundle_validation():
    with pytest.raises(ShapeError):
        guidance.ConditionBundle(np.zeros((2, 2)), np.zeros((3, 2)), 0.0)
    with pytest.raises(ValueError):
        guidance.ConditionBundle(np.zeros((2, 2)), np.zeros((2, 2)), -1.0)


def test_build_unconditional_ignores_llm_stream():
    d = 3
    fusion = cond.init_fusion(d)
    rng = Rng(8)
    c_lip = rng.normal_matrix(4, d)
    z_p = rng.normal_matrix(2, d)
    mu_prime = guidance.build_unconditional(c_lip, z_p, [3, 1], 2, fusion)
    llm = rng.normal_matrix(2, d)
    mu = cond.fuse_condition(c_lip, llm, z_p, [3, 1], 2, fusion)
    assert mu_prime.shape == mu.shape
    zeroed = cond.fuse_condition(c_lip, np.zeros_like(llm), z_p, [3, 1], 2, fusion)
    assert np.array_equal(mu_prime, zeroed)


def _constant_field(values_by_key):
    def field(x, t, mu):
        return np.broadcast_to(values_by_key[id(mu)], x.shape)

    return field


def test_guided_alpha_zero_bitwise_equals_unguided():
    net = flow.init_vector_field(2, 3, [6], Rng(9))
    rng = Rng(10)
    mu_satl = rng.normal_matrix(4, 3)
    mu_prime = rng.normal_matrix(4, 3)
    x0 = rng.normal_matrix(4, 2)
    bundle = guidance.ConditionBundle(mu_satl, mu_prime, alpha=0.0)
    guided, _ = guidance.guided_euler_sample(net, bundle, x0, 8)
    unguided, _ = flow.euler_sample(net, mu_satl, x0, 8)
    assert np.array_equal(guided, unguided)


def test_guided_zero_llm_makes_output_alpha_independent():
    # identical condition streams: the guidance term vanishes at every alpha
    net = flow.init_vector_field(2, 3, [6], Rng(11))
    rng = Rng(12)
    mu = rng.normal_matrix(4, 3)
    x0 = rng.normal_matrix(4, 2)
    outputs = []
    for alpha in (0.0, 0.2, 0.4, 0.6, 0.8):
        bundle = guidance.ConditionBundle(mu, mu.copy(), alpha=alpha)
        out, _ = guidance.guided_euler_sample(net, bundle, x0, 5)
        outputs.append(out)
    for out in outputs[1:]:
        assert np.array_equal(out, outputs[0])


def test_guided_constant_fields_closed_form():
    # constant v_cond = a and v_uncond = b: result is x0 + a + alpha (a - b)
    a = np.array([[1.5, -0.5]])
    b = np.array([[0.5, 1.0]])
    mu_satl = np.array([[1.0]])
    mu_prime = np.array([[0.0]])

    def field(x, t, mu):
        return np.broadcast_to(a if mu[0, 0] == 1.0 else b, x.shape)

    x0 = np.array([[0.25, 0.25]])
    for alpha in (0.0, 0.5, 0.75):
        bundle = guidance.ConditionBundle(mu_satl, mu_prime, alpha=alpha)
        out, _ = guidance.guided_euler_sample(field, bundle, x0, 4)
        expected = x0 + a + alpha * (a - b)
        assert np.allclose(out, expected, atol=1e-12)
