import numpy as np
import pytest

from nfmimo import mssan
from nfmimo.autograd import ParamStore, Tensor, grad_check, no_grad
from nfmimo.mssan import NetworkConfig

TOL = 1e-4


def small(variant="mssan", **kw):
    base = dict(Nr=8, Nt=2, embed_features=4, blocks=(1, 1, 1, 1), heads=(1, 2, 2, 1), san_blocks=2, cnn_depth=2)
    base.update(kw)
    return NetworkConfig(variant, **base)


def block_params(C, K):
    ln = 2 * C
    sma = 3 * ((C // K) * C + C + 9 * C + C) + K + (C * C + C)
    gsfn = 3 * (C * C + C) + (9 * C + C)
    return 2 * ln + sma + gsfn


def expected_count(cfg):
    C = cfg.embed_features
    conv = lambda k, cin, cout: k * k * cin * cout + cout  # noqa: E731
    dw = lambda c: 9 * c + c  # noqa: E731
    if cfg.variant == "cnn":
        n, cin = 0, 2
        for _ in range(cfg.cnn_depth):
            n += conv(3, cin, C)
            cin = C
        return n + conv(3, C, 2)
    n = conv(3, 2, C) + dw(C) + conv(3, C, 2)
    if cfg.variant == "san":
        return n + cfg.san_blocks * block_params(C, cfg.san_heads)
    B1, B2, B3, Br = cfg.blocks
    K1, K2, K3, Kr = cfg.heads
    n += 2 * B1 * block_params(C, K1) + 2 * B2 * block_params(2 * C, K2)
    n += B3 * block_params(4 * C, K3) + Br * block_params(C, Kr)
    n += conv(3, C, C) + conv(3, 2 * C, 2 * C)  # splits
    n += conv(3, 4 * C, 4 * C) + conv(3, 2 * C, 2 * C)  # concats
    n += dw(2 * C) + dw(C)  # fusions
    return n


class TestConfig:
    def test_defaults(self):
        cfg = mssan.full_config()
        assert (cfg.embed_features, cfg.blocks, cfg.heads) == (32, (1, 1, 2, 1), (1, 2, 4, 1))
        san = mssan.full_config("san")
        assert (san.embed_features, san.san_blocks) == (48, 10)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(variant="transformer"),
            dict(Nr=10),
            dict(heads=(3, 2, 4, 1)),
            dict(blocks=(1, 1, 1)),
            dict(embed_features=0),
        ],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            NetworkConfig(**kw)

    def test_roundtrip(self):
        cfg = small()
        assert NetworkConfig.from_dict(cfg.to_dict()) == cfg


class TestParameterCounts:
    @pytest.mark.parametrize("variant", mssan.VARIANTS)
    def test_small(self, variant):
        cfg = small(variant)
        assert mssan.init_params(cfg).num_parameters() == expected_count(cfg)

    @pytest.mark.parametrize("variant", mssan.VARIANTS)
    def test_full_size(self, variant):
        cfg = mssan.full_config(variant)
        assert mssan.init_params(cfg).num_parameters() == expected_count(cfg)


class TestShapes:
    def test_stage_trace_matches_table(self):
        cfg = small(Nr=16, Nt=4)
        trace = []
        x = np.zeros((2, 16, 4, 2))
        with no_grad():
            mssan.mssan_forward(x, mssan.init_params(cfg), cfg, trace=trace)
        analytic = dict(mssan.stage_shapes(cfg))
        for name, shp in trace:
            assert analytic[name] == shp
        assert [n for n, _ in trace] == ["embed", "enc1", "enc2", "enc3", "dec2", "dec1", "refine", "output"]

    def test_full_size_stage_shapes(self):
        shapes = dict(mssan.stage_shapes(mssan.full_config()))
        assert shapes["embed"] == (256, 8, 32)
        assert shapes["enc2"] == (128, 8, 64)
        assert shapes["enc3"] == (64, 8, 128)
        assert shapes["output"] == (256, 8, 2)

    @pytest.mark.parametrize("variant", mssan.VARIANTS)
    def test_unbatched(self, variant):
        cfg = small(variant)
        p = mssan.init_params(cfg)
        x = np.random.default_rng(0).standard_normal((8, 2, 2))
        with no_grad():
            single = mssan.forward(x, p, cfg).data
            batch = mssan.forward(x[None], p, cfg).data
        assert single.shape == (8, 2, 2)
        assert np.allclose(single, batch[0], atol=1e-12)

    def test_shape_mismatch(self):
        cfg = small()
        with pytest.raises(ValueError):
            mssan.forward(np.zeros((1, 8, 3, 2)), mssan.init_params(cfg), cfg)
        with pytest.raises(ValueError):
            mssan.forward(np.zeros((8, 2)), mssan.init_params(cfg), cfg)


class TestSplitConcat:
    def test_layout(self):
        x = np.arange(2 * 4 * 3 * 5, dtype=float).reshape(2, 4, 3, 5)
        y = mssan.split_reshape(Tensor(x)).data
        assert y.shape == (2, 2, 3, 10)
        assert np.array_equal(y[..., :5], x[:, :2])
        assert np.array_equal(y[..., 5:], x[:, 2:])

    def test_inverse(self):
        x = np.random.default_rng(0).standard_normal((3, 8, 2, 6))
        assert np.array_equal(mssan.concat_reshape(mssan.split_reshape(Tensor(x))).data, x)
        assert np.array_equal(mssan.split_reshape(mssan.concat_reshape(Tensor(x))).data, x)

    def test_odd(self):
        with pytest.raises(ValueError):
            mssan.split_reshape(Tensor(np.zeros((1, 3, 2, 2))))
        with pytest.raises(ValueError):
            mssan.concat_reshape(Tensor(np.zeros((1, 4, 2, 3))))


def _block_store(C, K, seed=0):
    store = ParamStore()
    mssan.init_sa_block(store.scope("b"), C, K, np.random.default_rng(seed))
    return store


class TestAttention:
    def test_gram_and_softmax(self):
        C, K = 6, 2
        store = _block_store(C, K)
        s = store.scope("b.sma")
        s["scale"].data[:] = [0.7, 1.9]
        x = Tensor(np.random.default_rng(1).standard_normal((2, 4, 3, C)))
        rec = []
        mssan.sma_forward(x, s, K, attn_out=rec)
        M, A, q, k = (t.data for t in rec[0])
        assert M.shape == (2, K, C // K, C // K)
        ref = np.einsum("bhpi,bhpj->bhij", k, q)
        assert np.allclose(M, ref, atol=1e-12)
        assert np.allclose(A.sum(axis=-2), 1.0, atol=1e-12)
        scaled = M / np.array([0.7, 1.9])[None, :, None, None]
        e = np.exp(scaled - scaled.max(axis=-2, keepdims=True))
        assert np.allclose(A, e / e.sum(axis=-2, keepdims=True), atol=1e-12)

    def test_output_is_value_mixture(self):
        # with an identity projection the output is V A per head
        C, K = 4, 1
        store = _block_store(C, K)
        s = store.scope("b.sma")
        s["proj.weight"].data[:] = np.eye(C)[None, None]
        s["proj.bias"].data[:] = 0
        x = Tensor(np.random.default_rng(2).standard_normal((1, 3, 2, C)))
        rec = []
        out = mssan.sma_forward(x, s, K, attn_out=rec).data
        M, A, q, k = (t.data for t in rec[0])
        # recompute V independently from the projection weights
        pw, pb = s["v_pw.weight"].data[0, 0], s["v_pw.bias"].data
        t = x.data @ pw + pb
        dwk, dwb = s["v_dw.weight"].data[:, :, 0, :], s["v_dw.bias"].data
        pad = np.pad(t, ((0, 0), (1, 1), (1, 1), (0, 0)))
        v = np.zeros_like(t)
        for i in range(3):
            for j in range(3):
                v += pad[:, i : i + 3, j : j + 2] * dwk[i, j]
        v += dwb
        ref = v.reshape(1, 6, C) @ A[0, 0]
        assert np.allclose(out.reshape(1, 6, C), ref, atol=1e-12)

    def test_heads_must_divide(self):
        store = _block_store(4, 1)
        with pytest.raises(ValueError):
            mssan.sma_forward(Tensor(np.zeros((1, 2, 2, 4))), store.scope("b.sma"), 3)


class TestBlocks:
    def test_residual_identity(self):
        C = 4
        store = _block_store(C, 2)
        for name in ("b.sma.proj", "b.gsfn.pw_out"):
            store[f"{name}.weight"].data[:] = 0
            store[f"{name}.bias"].data[:] = 0
        x = np.random.default_rng(3).standard_normal((2, 4, 2, C))
        y = mssan.sa_block(Tensor(x), store.scope("b"), 2).data
        assert np.array_equal(y, x)

    def test_gsfn_zero_gate(self):
        C = 4
        store = _block_store(C, 1)
        s = store.scope("b.gsfn")
        s["gate.weight"].data[:] = 0
        s["gate.bias"].data[:] = 0
        s["pw_out.bias"].data[:] = [1.0, -2.0, 0.5, 3.0]
        x = Tensor(np.random.default_rng(4).standard_normal((1, 3, 3, C)))
        y = mssan.gsfn_forward(x, s).data
        assert np.allclose(y, np.broadcast_to([1.0, -2.0, 0.5, 3.0], y.shape), atol=1e-14)

    def test_sa_block_gradients(self):
        store = _block_store(4, 2, seed=5)
        x = Tensor(np.random.default_rng(5).standard_normal((2, 4, 2, 4)), requires_grad=True)
        w = np.random.default_rng(6).standard_normal((2, 4, 2, 4))
        params = [store[k] for k in store]
        for p in params:
            p.requires_grad = True

        def f(xs):
            return (mssan.sa_block(xs[0], store.scope("b"), 2) * w).sum()

        assert grad_check(f, [x] + params, max_coords=10) < TOL


class TestNetworks:
    @pytest.mark.parametrize("variant", mssan.VARIANTS)
    def test_gradients(self, variant):
        cfg = small(variant)
        store = mssan.init_params(cfg, seed=1)
        for k in store:
            store[k].requires_grad = True
        x = Tensor(np.random.default_rng(7).standard_normal((2, 8, 2, 2)), requires_grad=True)
        w = np.random.default_rng(8).standard_normal((2, 8, 2, 2))

        def f(xs):
            return (mssan.forward(xs[0], store, cfg) * w).sum()

        assert grad_check(f, [x] + [store[k] for k in store], max_coords=6) < TOL

    @pytest.mark.parametrize("variant", mssan.VARIANTS)
    def test_deterministic_init(self, variant):
        cfg = small(variant)
        a, b = mssan.init_params(cfg, seed=3), mssan.init_params(cfg, seed=3)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)
        c = mssan.init_params(cfg, seed=4)
        assert not all(np.array_equal(a[k].data, c[k].data) for k in a)

    def test_float32(self):
        cfg = small()
        p = mssan.init_params(cfg).astype(np.float32)
        x = Tensor(np.zeros((1, 8, 2, 2)), dtype=np.float32)
        with no_grad():
            assert mssan.forward(x, p, cfg).dtype == np.float32

    def test_describe(self):
        text = mssan.describe(small())
        assert "enc3" in text
        assert f"total        {expected_count(small())}" in text
