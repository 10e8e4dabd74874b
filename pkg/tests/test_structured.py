"""Structured layers: apply/materialize agreement, counts, subspace, gradients."""

import math

import numpy as np
import pytest

from tokencert.corpus import TokenStream
from tokencert.structured import (
    DenseLinear,
    KroneckerLinear,
    LoRALinear,
    MonarchLinear,
    SubspaceExpansion,
    fd_gradient_check,
    make_layer,
    pad_to_square,
    subspace_expand,
)
from tokencert.toymodel import bag_features, build_toy_model, context_table


def rel_err(got, want):
    scale = max(np.abs(want).max(), 1e-12)
    return np.abs(got - want).max() / scale


RANDOM_SHAPES = [
    ("dense", dict(a=7, b=13)),
    ("lora", dict(a=12, b=20, rank=3)),
    ("lora", dict(a=64, b=64, rank=4)),
    ("kronecker", dict(a=12, b=18, factor_shape=(3, 6))),
    ("kronecker", dict(a=64, b=64, factor_shape=(8, 8))),
    ("monarch", dict(a=16, b=16, nblocks=4)),
    ("monarch", dict(a=24, b=12, nblocks=3)),
    ("monarch", dict(a=36, b=36, nblocks=6)),
]


def build(kind, spec, seed=0):
    spec = dict(spec)
    a, b = spec.pop("a"), spec.pop("b")
    return make_layer(kind, a, b, seed=seed, **spec)


class TestApplyMaterializeAgreement:
    @pytest.mark.parametrize("kind,spec", RANDOM_SHAPES)
    def test_apply_matches_dense_oracle(self, kind, spec):
        layer = build(kind, spec, seed=5)
        W = layer.materialize()
        assert W.shape == layer.shape
        rng = np.random.default_rng(6)
        X = rng.standard_normal((100, layer.shape[1]))
        assert rel_err(layer.apply(X), X @ W.T) < 1e-6

    def test_single_vector_and_shape_errors(self):
        layer = MonarchLinear(16, 16, nblocks=4, seed=1)
        x = np.arange(16, dtype=float)
        assert rel_err(layer.apply(x), layer.materialize() @ x) < 1e-6
        with pytest.raises(ValueError):
            layer.apply(np.zeros(15))

    def test_kronecker_identity(self):
        layer = KroneckerLinear(9, 9, 3, 3, seed=0)
        layer.A = np.eye(3)
        layer.B = np.eye(3)
        assert np.allclose(layer.materialize(), np.eye(9))

    def test_lora_zero_update_is_base(self):
        layer = LoRALinear(10, 8, rank=2, seed=3)
        layer.B = np.zeros_like(layer.B)
        assert np.array_equal(layer.materialize(), layer.W0)


class TestParamCount:
    def test_closed_forms(self):
        assert LoRALinear(64, 64, rank=4).param_count() == 512
        assert KroneckerLinear(64, 64, 8, 8).param_count() == 128
        assert DenseLinear(7, 9).param_count() == 63
        # sqrt(a) blocks of sqrt(a) x sqrt(b): a*sqrt(b) per factor
        assert MonarchLinear(16, 16, nblocks=4).param_count() == 128

    @pytest.mark.parametrize("kind,spec", RANDOM_SHAPES)
    def test_count_equals_flattened_scalars(self, kind, spec):
        layer = build(kind, spec)
        assert layer.param_count() == layer.get_params().size

    @pytest.mark.parametrize("kind,spec", RANDOM_SHAPES)
    def test_params_roundtrip(self, kind, spec):
        layer = build(kind, spec, seed=2)
        flat = layer.get_params()
        rng = np.random.default_rng(3)
        new = rng.standard_normal(flat.size)
        layer.set_params(new)
        assert np.array_equal(layer.get_params(), new)


class TestSubspace:
    def test_zero_coordinates_recover_theta0(self):
        theta0 = np.random.default_rng(4).standard_normal(64)
        exp = SubspaceExpansion(theta0, 4, seed=9)
        assert np.array_equal(exp.expand(np.zeros(4)), theta0)

    def test_matches_dense_kron_projector(self):
        exp = SubspaceExpansion(np.zeros(64), 4, seed=11)
        P = np.kron(exp.Q1, exp.Q2)
        rng = np.random.default_rng(12)
        for _ in range(10):
            w = rng.standard_normal(4)
            assert rel_err(exp.expand(w), P @ w) < 1e-10

    def test_isometry(self):
        exp = SubspaceExpansion(np.zeros(144), 9, seed=13)
        rng = np.random.default_rng(14)
        for _ in range(100):
            w = rng.standard_normal(9)
            assert abs(np.linalg.norm(exp.expand(w)) - np.linalg.norm(w)) \
                <= 1e-6 * np.linalg.norm(w)

    def test_projection_is_adjoint(self):
        exp = SubspaceExpansion(np.zeros(100), 25, seed=15)
        rng = np.random.default_rng(16)
        w, g = rng.standard_normal(25), rng.standard_normal(100)
        # <Pw, g> == <w, P^T g>
        assert np.dot(exp.expand(w), g) == pytest.approx(
            np.dot(w, exp.project_gradient(g)), rel=1e-10
        )

    def test_standalone_op_deterministic(self):
        w = np.ones(4)
        a = subspace_expand(w, seed=7, D=64, d=4)
        b = subspace_expand(w, seed=7, D=64, d=4)
        c = subspace_expand(w, seed=8, D=64, d=4)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_non_square_rejected_with_guidance(self):
        with pytest.raises(ValueError, match="pad"):
            subspace_expand(np.ones(4), seed=1, D=60, d=4)
        with pytest.raises(ValueError, match="pad"):
            SubspaceExpansion(np.zeros(64), 5, seed=1)

    def test_pad_to_square(self):
        assert pad_to_square(64) == 64
        assert pad_to_square(65) == 81
        assert pad_to_square(1) == 1


def toy_loss_fn(model, phi, targets):
    def fn(theta):
        model.load_flat(theta)
        return model.loss_and_grad(phi, targets)
    return fn


class TestGradients:
    def _random_problem(self, kind, V=12, context=3, seed=0, **kwargs):
        rng = np.random.default_rng(seed)
        docs = [rng.integers(0, V, size=40).tolist() for _ in range(4)]
        stream = TokenStream.from_documents(docs, vocab_size=V)
        model = build_toy_model(V, context, kind, seed=seed, **kwargs)
        ctx = context_table(stream, context)
        batch = rng.integers(0, len(stream), size=32)
        phi = bag_features(ctx[batch], V)
        targets = stream.tokens[batch]
        return model, phi, targets

    def test_dense_near_exact(self):
        model, phi, targets = self._random_problem("dense")
        fn = toy_loss_fn(model, phi, targets)
        point = model.flat_params() + 0.05
        assert fd_gradient_check(fn, point, eps=1e-5) < 1e-8

    @pytest.mark.parametrize("kind,kwargs", [
        ("lora", dict(rank=3)),
        ("kronecker", dict(factor_shape=(3, 3))),
        ("monarch", dict(nblocks=4)),
    ])
    def test_structured_kinds(self, kind, kwargs):
        model, phi, targets = self._random_problem(kind, seed=21, **kwargs)
        fn = toy_loss_fn(model, phi, targets)
        rng = np.random.default_rng(22)
        point = model.flat_params() + 0.1 * rng.standard_normal(model.n_trainable)
        assert fd_gradient_check(fn, point, eps=1e-4) < 1e-4

    def test_subspace_gradient(self):
        model, phi, targets = self._random_problem(
            "dense", V=12, seed=23, subspace_dim=16
        )
        fn = toy_loss_fn(model, phi, targets)
        point = model.flat_params() + 0.1
        assert point.size == 16
        assert fd_gradient_check(fn, point, eps=1e-5) < 1e-6
