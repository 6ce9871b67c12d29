"""Forward-pass stages: shapes, gating arithmetic, attention equivariance,
evidence construction, and snippet-level fusion."""

import numpy as np
import pytest

import evloc.autodiff as ad
from evloc.autodiff import Tensor
from evloc.evidence import TotalConflictError, combine, masses_from_evidence
from evloc.network import (ModelParams, classify, cross_gate, filter_attention,
                           forward, fuse_snippet_evidence, fuse_streams,
                           reweight_evidence, snippet_evidence, stream_attention)
from evloc.validation import ValidationError

TOL = 1e-9


@pytest.fixture
def params():
    return ModelParams.initialize(num_classes=3, feature_dim=8, heads=4,
                                  rng=np.random.default_rng(99))


@pytest.fixture
def rng():
    return np.random.default_rng(5)


class TestStreamAttention:
    def test_single_snippet_degenerate(self, params, rng):
        x = Tensor(rng.normal(size=(8, 1)))
        out = stream_attention(x, params)
        assert out.shape == (1,)
        assert np.isfinite(out.data).all()

    def test_deterministic(self, params, rng):
        x = rng.normal(size=(8, 6))
        first = stream_attention(Tensor(x), params).data
        second = stream_attention(Tensor(x), params).data
        assert np.array_equal(first, second)

    def test_permutation_equivariance(self, params, rng):
        x = rng.normal(size=(8, 7))
        perm = rng.permutation(7)
        base = stream_attention(Tensor(x), params).data
        permuted = stream_attention(Tensor(x[:, perm]), params).data
        assert np.allclose(permuted, base[perm], atol=1e-12)

    def test_shape_mismatch(self, params, rng):
        with pytest.raises(ValidationError):
            stream_attention(Tensor(rng.normal(size=(5, 4))), params)


class TestCrossGate:
    def test_zero_weights_halve_features(self, rng):
        x = rng.normal(size=(4, 6))
        zeros = Tensor(np.zeros(6))
        gated_f, gated_r = cross_gate(Tensor(x), Tensor(2.0 * x), zeros, zeros)
        assert np.allclose(gated_f.data, x / 2.0, atol=TOL)
        assert np.allclose(gated_r.data, x, atol=TOL)

    def test_gate_is_symmetric_between_streams(self, rng):
        a_f = Tensor(rng.normal(size=5))
        a_r = Tensor(rng.normal(size=5))
        x = Tensor(np.ones((3, 5)))
        out_f, out_r = cross_gate(x, x, a_f, a_r)
        # Same gate applied to identical features gives identical results.
        assert np.array_equal(out_f.data, out_r.data)

    def test_column_scaling(self):
        x = Tensor(np.array([[2.0], [4.0]]))
        zero = Tensor(np.zeros(1))
        out, _ = cross_gate(x, x, zero, zero)
        assert np.allclose(out.data, [[1.0], [2.0]], atol=TOL)

    def test_length_mismatch(self, rng):
        x = Tensor(rng.normal(size=(3, 5)))
        with pytest.raises(ValidationError):
            cross_gate(x, x, Tensor(np.zeros(4)), Tensor(np.zeros(4)))


class TestFilterAttention:
    def test_outputs_strictly_inside_unit_interval(self, params, rng):
        out = filter_attention(Tensor(rng.normal(size=(8, 9)) * 3), params)
        assert np.all(out.data > 0) and np.all(out.data < 1)

    def test_zero_parameters_give_half(self, rng):
        p = ModelParams.initialize(3, 8, 4, np.random.default_rng(0))
        zeroed = ModelParams.from_named(3, 8, 4, {
            name: Tensor(np.zeros_like(t.data)) for name, t in p.named().items()})
        out = filter_attention(Tensor(rng.normal(size=(8, 5))), zeroed)
        assert np.allclose(out.data, 0.5, atol=TOL)

    def test_deterministic(self, params, rng):
        x = rng.normal(size=(8, 5))
        assert np.array_equal(filter_attention(Tensor(x), params).data,
                              filter_attention(Tensor(x), params).data)


class TestFuseStreams:
    def test_equal_attention_passthrough(self, rng):
        a = Tensor(rng.uniform(size=6))
        x = Tensor(rng.normal(size=(4, 6)))
        _, fused_a = fuse_streams(x, x, a, a)
        assert np.allclose(fused_a.data, a.data, atol=TOL)

    def test_average(self):
        a_f = Tensor(np.full(3, 0.2))
        a_r = Tensor(np.full(3, 0.8))
        x = Tensor(np.zeros((2, 3)))
        _, fused_a = fuse_streams(x, x, a_f, a_r)
        assert np.allclose(fused_a.data, 0.5, atol=TOL)

    def test_channel_doubling(self, rng):
        x_f = Tensor(rng.normal(size=(4, 6)))
        x_r = Tensor(rng.normal(size=(4, 6)))
        a = Tensor(rng.uniform(size=6))
        fused, _ = fuse_streams(x_f, x_r, a, a)
        assert fused.shape == (8, 6)
        assert np.array_equal(fused.data[:4], x_f.data)
        assert np.array_equal(fused.data[4:], x_r.data)


class TestClassify:
    def test_output_shape(self, params, rng):
        out = classify(Tensor(rng.normal(size=(16, 10))), params)
        assert out.shape == (10, 4)

    def test_zero_parameters_zero_scores(self, rng):
        p = ModelParams.initialize(3, 8, 4, np.random.default_rng(0))
        zeroed = ModelParams.from_named(3, 8, 4, {
            name: Tensor(np.zeros_like(t.data)) for name, t in p.named().items()})
        out = classify(Tensor(rng.normal(size=(16, 5))), zeroed)
        assert np.all(out.data == 0.0)

    def test_finite_on_random_input(self, params, rng):
        out = classify(Tensor(rng.normal(size=(16, 7)) * 4), params)
        assert np.isfinite(out.data).all()


class TestSnippetEvidence:
    def test_zero_scores_unit_evidence(self):
        z = Tensor(np.zeros((3, 3)))
        e = snippet_evidence(z, 2)
        assert np.all(e.data == 1.0)
        assert e.shape == (3, 2)

    def test_clamped_at_ten(self):
        z = Tensor(np.array([[20.0, -20.0, 0.0]]))
        e = snippet_evidence(z, 2)
        assert e.data[0, 0] == pytest.approx(np.exp(10.0))
        assert e.data[0, 1] == pytest.approx(np.exp(-10.0))

    def test_rows_form_valid_masses(self, rng):
        z = Tensor(rng.normal(size=(6, 4)) * 2)
        e = snippet_evidence(z, 3)
        for t in range(6):
            m = masses_from_evidence(e.data[t])
            assert abs(m.singletons.sum() + m.theta - 1.0) <= TOL


class TestReweightEvidence:
    def test_unit_attention_unchanged(self, rng):
        e = Tensor(rng.uniform(0.1, 3.0, size=(4, 3)))
        out = reweight_evidence(e, Tensor(np.ones(4)))
        assert np.allclose(out.data, e.data, atol=TOL)

    def test_zero_attention_vacuous_row(self):
        e = Tensor(np.array([[3.0, 1.0], [2.0, 2.0]]))
        out = reweight_evidence(e, Tensor(np.array([0.0, 1.0])))
        m = masses_from_evidence(out.data[0])
        assert m.theta == 1.0

    def test_half_attention_worked_example(self):
        e = Tensor(np.array([[3.0, 1.0]]))
        out = reweight_evidence(e, Tensor(np.array([0.5])))
        assert np.allclose(out.data, [[1.5, 0.5]], atol=TOL)
        m = masses_from_evidence(out.data[0])
        assert m.theta == pytest.approx(0.5, abs=TOL)  # S = 4, theta = 2/4

    def test_length_mismatch(self):
        with pytest.raises(ValidationError):
            reweight_evidence(Tensor(np.ones((3, 2))), Tensor(np.ones(4)))


class TestFuseSnippetEvidence:
    def test_vacuous_second_mass_is_identity(self):
        e1 = np.array([[3.0, 1.0]])
        e2 = np.zeros((1, 2))
        (fused,) = fuse_snippet_evidence(e1, e2)
        original = masses_from_evidence(e1[0])
        assert np.allclose(fused.singletons, original.singletons, atol=1e-12)
        assert fused.theta == pytest.approx(original.theta, abs=1e-12)

    def test_self_fusion_worked_example(self):
        e = np.array([[3.0, 1.0]])
        (fused,) = fuse_snippet_evidence(e, e)
        assert fused.singletons[0] == pytest.approx(0.7, abs=TOL)
        assert fused.singletons[1] == pytest.approx(1.0 / 6.0, abs=TOL)
        assert fused.theta == pytest.approx(2.0 / 15.0, abs=TOL)

    def test_matches_pairwise_combine_oracle(self, rng):
        e1 = rng.uniform(0.0, 5.0, size=(10, 4))
        attention = rng.uniform(0.0, 1.0, size=10)
        e2 = e1 * attention[:, None]
        fused = fuse_snippet_evidence(e1, e2)
        for t in range(10):
            expected = combine(masses_from_evidence(e1[t]),
                               masses_from_evidence(e2[t]))
            assert np.allclose(fused[t].singletons, expected.singletons, atol=1e-12)
            assert fused[t].theta == pytest.approx(expected.theta, abs=1e-12)
            # Fusion never increases uncertainty beyond either input.
            m1 = masses_from_evidence(e1[t])
            m2 = masses_from_evidence(e2[t])
            assert fused[t].theta <= min(m1.theta, m2.theta) + 1e-12

    def test_total_conflict_names_snippet(self):
        # Dogmatic opposing masses need evidence far beyond the exp clamp, so
        # this path is unreachable from the model but still guarded.
        e1 = np.array([[1e16, 0.0], [0.0, 1e16]])
        e2 = np.array([[1e16, 0.0], [1e16, 0.0]])
        with pytest.raises(TotalConflictError, match="snippet 1"):
            fuse_snippet_evidence(e1, e2)


class TestFullForward:
    def test_shapes_and_ranges(self, params, rng):
        flow = rng.normal(size=(8, 12))
        rgb = rng.normal(size=(8, 12))
        out = forward(params, flow, rgb)
        assert out.features.shape == (16, 12)
        assert out.attention.shape == (12,)
        assert np.all(out.attention.data > 0) and np.all(out.attention.data < 1)
        assert out.cas.shape == (12, 4)
        assert out.evidence_raw.shape == (12, 3)
        assert len(out.fused_masses) == 12
        for mass in out.fused_masses:
            assert abs(mass.singletons.sum() + mass.theta - 1.0) <= TOL
        assert np.array_equal(out.fused_thetas,
                              np.array([m.theta for m in out.fused_masses]))

    def test_deterministic(self, params, rng):
        flow = rng.normal(size=(8, 9))
        rgb = rng.normal(size=(8, 9))
        a = forward(params, flow, rgb)
        b = forward(params, flow, rgb)
        assert np.array_equal(a.attention.data, b.attention.data)
        assert np.array_equal(a.cas.data, b.cas.data)

    def test_unit_attention_reduces_to_self_fusion(self, params, rng):
        flow = rng.normal(size=(8, 5))
        rgb = rng.normal(size=(8, 5))
        out = forward(params, flow, rgb)
        e1 = out.evidence_raw.data
        forced = fuse_snippet_evidence(e1, e1)
        for t in range(5):
            expected = combine(masses_from_evidence(e1[t]), masses_from_evidence(e1[t]))
            assert np.allclose(forced[t].singletons, expected.singletons, atol=1e-12)

    def test_ablation_flags(self, params, rng):
        flow = rng.normal(size=(8, 6))
        rgb = rng.normal(size=(8, 6))
        plain = forward(params, flow, rgb, use_cross_attention=False)
        assert plain.attention.shape == (6,)
        no_fusion = forward(params, flow, rgb, use_evidential_fusion=False)
        assert no_fusion.fused_masses is None
        assert np.all(no_fusion.fused_thetas == 0.5)

    def test_stream_shape_mismatch(self, params, rng):
        with pytest.raises(ValidationError):
            forward(params, rng.normal(size=(8, 6)), rng.normal(size=(8, 7)))


class TestModelParams:
    def test_named_roundtrip(self, params):
        table = params.named()
        rebuilt = ModelParams.from_named(3, 8, 4, table)
        for name, tensor in rebuilt.named().items():
            assert tensor is table[name]

    def test_missing_tensor_rejected(self, params):
        table = dict(params.named())
        table.pop("cls.w3")
        with pytest.raises(ValidationError):
            ModelParams.from_named(3, 8, 4, table)

    def test_head_dim_floor(self):
        p = ModelParams.initialize(2, 3, 4, np.random.default_rng(1))
        assert p.head_dim == 1
        out = stream_attention(Tensor(np.random.default_rng(2).normal(size=(3, 4))), p)
        assert out.shape == (4,)
