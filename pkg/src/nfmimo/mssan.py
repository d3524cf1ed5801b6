"""
Spatial-attention channel estimation networks.

All networks map a noisy channel tensor ``(B, Nr, Nt, 2)`` (real and
imaginary parts as features) to a channel estimate of the same shape.

``mssan``
    Three-scale encoder/decoder. Antenna splitting halves the receive axis
    and doubles the features, so attention maps at deeper stages relate
    progressively smaller receive-antenna sub-blocks (subchannels)::

        F0 = embed(x)                                   (Nr,   Nt, C)
        E1 = SA_B1(F0)                                  (Nr,   Nt, C)
        E2 = SA_B2(split(E1))                           (Nr/2, Nt, 2C)
        E3 = SA_B3(split(E2))                           (Nr/4, Nt, 4C)
        D2 = SA_B2(dw(E2 + concat(E3)))                 (Nr/2, Nt, 2C)
        D1 = SA_B1(dw(E1 + concat(D2)))                 (Nr,   Nt, C)
        out = reconstruct(dw(F0) + SA_Br(D1))           (Nr,   Nt, 2)

``san``
    Single-scale ablation: ``reconstruct(dw(F0) + SA_B(F0))``.

``cnn``
    Plain stack of 3x3 convolutions with GELU and an input residual.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .autograd import ops
from .autograd.params import ParamStore, Scope, conv_init
from .autograd.tensor import Tensor, as_tensor, get_default_dtype

VARIANTS = ("mssan", "san", "cnn")


@dataclass
class NetworkConfig:
    variant: str = "mssan"
    Nr: int = 256
    Nt: int = 8
    embed_features: int = 32
    blocks: tuple[int, int, int, int] = (1, 1, 2, 1)
    heads: tuple[int, int, int, int] = (1, 2, 4, 1)
    san_blocks: int = 10
    san_heads: int = 1
    cnn_depth: int = 6
    ln_eps: float = 1e-5
    input_scaling: bool = False  # applied by callers, see bench.rms_scale
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.blocks = tuple(int(b) for b in self.blocks)
        self.heads = tuple(int(h) for h in self.heads)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        C = self.embed_features
        if C < 1:
            raise ValueError("embed_features must be positive")
        if self.variant == "mssan":
            if self.Nr % 4:
                raise ValueError(f"MsSAN needs Nr divisible by 4, got {self.Nr}")
            if len(self.blocks) != 4 or len(self.heads) != 4:
                raise ValueError("blocks and heads need four entries (B1, B2, B3, Br)")
            for width, k in zip((C, 2 * C, 4 * C, C), self.heads):
                if k < 1 or width % k:
                    raise ValueError(f"{width} features not divisible by {k} heads")
        elif self.variant == "san":
            if C % self.san_heads:
                raise ValueError(f"{C} features not divisible by {self.san_heads} heads")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = list(self.blocks)
        d["heads"] = list(self.heads)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def full_config(variant: str = "mssan", Nr: int = 256, Nt: int = 8) -> NetworkConfig:
    """Full-size settings: C=32, blocks {1,1,2,1}, heads {1,2,4,1}; SAN uses C=48 and 10 blocks."""
    if variant == "san":
        return NetworkConfig("san", Nr, Nt, embed_features=48, san_blocks=10, san_heads=1)
    return NetworkConfig(variant, Nr, Nt, embed_features=32)


def desk_config(variant: str = "mssan", Nr: int = 32, Nt: int = 4) -> NetworkConfig:
    """Laptop-sized settings used for the reduced-scale experiments."""
    if variant == "san":
        return NetworkConfig("san", Nr, Nt, embed_features=24, san_blocks=10, san_heads=1)
    return NetworkConfig(variant, Nr, Nt, embed_features=16)


# -- layers -----------------------------------------------------------------


def _init_conv(s: Scope, name: str, rng, k: int, cin: int, cout: int, groups: int = 1):
    s.add(f"{name}.weight", conv_init(rng, k, cin // groups, cout))
    s.add(f"{name}.bias", np.zeros(cout, dtype=get_default_dtype()))


def _conv(s: Scope, name: str, x: Tensor, groups: int = 1) -> Tensor:
    return ops.conv2d(x, s[f"{name}.weight"], s[f"{name}.bias"], groups=groups)


def _init_ln(s: Scope, name: str, C: int):
    s.add(f"{name}.gain", np.ones(C, dtype=get_default_dtype()))
    s.add(f"{name}.bias", np.zeros(C, dtype=get_default_dtype()))


def init_sma(s: Scope, C: int, heads: int, rng):
    ck = C // heads
    for name in ("q", "k", "v"):
        _init_conv(s, f"{name}_pw", rng, 1, C, C, groups=heads)
        _init_conv(s, f"{name}_dw", rng, 3, C, C, groups=C)
    s.add("scale", np.ones(heads, dtype=get_default_dtype()))
    _init_conv(s, "proj", rng, 1, C, C)
    return ck


def sma_forward(x: Tensor, s: Scope, heads: int, attn_out: list | None = None) -> Tensor:
    """Spatial multi-head attention on ``(B, H, W, C)``.

    Per head, ``M = K^T Q`` is the ``ck x ck`` Gram matrix of the flattened
    key/query feature maps; ``softmax`` runs over the key index so every
    query column mixes value features convexly. ``attn_out`` (optional list)
    receives ``(M, softmax(M / scale))`` for inspection.
    """
    B, H, W, C = x.shape
    if C % heads:
        raise ValueError(f"{C} features not divisible by {heads} heads")
    ck = C // heads

    def project(name):
        t = _conv(s, f"{name}_pw", x, groups=heads)
        t = _conv(s, f"{name}_dw", t, groups=C)
        return ops.transpose(ops.reshape(t, (B, H * W, heads, ck)), (0, 2, 1, 3))

    q, k, v = project("q"), project("k"), project("v")
    M = ops.matmul(k, q, transpose_a=True)  # (B, heads, ck, ck)
    scale = ops.reshape(s["scale"], (1, heads, 1, 1))
    A = ops.softmax(ops.div(M, scale), axis=-2)
    if attn_out is not None:
        attn_out.append((M, A, q, k))
    out = ops.matmul(v, A)  # (B, heads, HW, ck)
    out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (B, H, W, C))
    return _conv(s, "proj", out)


def init_gsfn(s: Scope, C: int, rng):
    _init_conv(s, "pw_in", rng, 1, C, C)
    _init_conv(s, "dw", rng, 3, C, C, groups=C)
    _init_conv(s, "gate", rng, 1, C, C)
    _init_conv(s, "pw_out", rng, 1, C, C)


def gsfn_forward(x: Tensor, s: Scope) -> Tensor:
    """``pw_out(GELU(dw(pw_in(x))) * gate(x))``."""
    C = x.shape[-1]
    a = ops.gelu(_conv(s, "dw", _conv(s, "pw_in", x), groups=C))
    return _conv(s, "pw_out", ops.mul(a, _conv(s, "gate", x)))


def init_sa_block(s: Scope, C: int, heads: int, rng):
    _init_ln(s, "ln1", C)
    init_sma(s.scope("sma"), C, heads, rng)
    _init_ln(s, "ln2", C)
    init_gsfn(s.scope("gsfn"), C, rng)


def sa_block(x: Tensor, s: Scope, heads: int, eps: float = 1e-5, attn_out=None) -> Tensor:
    h = ops.layer_norm(x, s["ln1.gain"], s["ln1.bias"], eps)
    x = ops.add(x, sma_forward(h, s.scope("sma"), heads, attn_out))
    h = ops.layer_norm(x, s["ln2.gain"], s["ln2.bias"], eps)
    return ops.add(x, gsfn_forward(h, s.scope("gsfn")))


def init_sa_module(s: Scope, C: int, heads: int, blocks: int, rng):
    for b in range(blocks):
        init_sa_block(s.scope(f"block{b}"), C, heads, rng)


def sa_module(x: Tensor, s: Scope, heads: int, blocks: int, eps: float = 1e-5) -> Tensor:
    for b in range(blocks):
        x = sa_block(x, s.scope(f"block{b}"), heads, eps)
    return x


# -- antenna splitting / concatenation ---------------------------------------


def split_reshape(x: Tensor) -> Tensor:
    """``(B, H, W, C) -> (B, H/2, W, 2C)``: upper rows keep features ``[0, C)``, lower rows become ``[C, 2C)``."""
    B, H, W, C = x.shape
    if H % 2:
        raise ValueError(f"antenna splitting needs an even receive extent, got {H}")
    t = ops.reshape(x, (B, 2, H // 2, W, C))
    t = ops.transpose(t, (0, 2, 3, 1, 4))
    return ops.reshape(t, (B, H // 2, W, 2 * C))


def concat_reshape(x: Tensor) -> Tensor:
    """Inverse of :func:`split_reshape`: ``(B, H, W, C) -> (B, 2H, W, C/2)``."""
    B, H, W, C = x.shape
    if C % 2:
        raise ValueError(f"antenna concatenation needs an even feature count, got {C}")
    t = ops.reshape(x, (B, H, W, 2, C // 2))
    t = ops.transpose(t, (0, 3, 1, 2, 4))
    return ops.reshape(t, (B, 2 * H, W, C // 2))


def antenna_split(x: Tensor, s: Scope) -> Tensor:
    return split_reshape(_conv(s, "conv", x))


def antenna_concat(x: Tensor, s: Scope) -> Tensor:
    return concat_reshape(_conv(s, "conv", x))


# -- networks ----------------------------------------------------------------


def init_params(cfg: NetworkConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    root = store.scope("")
    C = cfg.embed_features
    if cfg.variant == "cnn":
        cin = 2
        for i in range(cfg.cnn_depth):
            _init_conv(root, f"conv{i}", rng, 3, cin, C)
            cin = C
        _init_conv(root, "head", rng, 3, cin, 2)
        return store

    _init_conv(root, "embed", rng, 3, 2, C)
    if cfg.variant == "san":
        init_sa_module(root.scope("sa"), C, cfg.san_heads, cfg.san_blocks, rng)
    else:
        B1, B2, B3, Br = cfg.blocks
        K1, K2, K3, Kr = cfg.heads
        init_sa_module(root.scope("enc1"), C, K1, B1, rng)
        _init_conv(root, "split1.conv", rng, 3, C, C)
        init_sa_module(root.scope("enc2"), 2 * C, K2, B2, rng)
        _init_conv(root, "split2.conv", rng, 3, 2 * C, 2 * C)
        init_sa_module(root.scope("enc3"), 4 * C, K3, B3, rng)
        _init_conv(root, "concat2.conv", rng, 3, 4 * C, 4 * C)
        _init_conv(root, "fuse2", rng, 3, 2 * C, 2 * C, groups=2 * C)
        init_sa_module(root.scope("dec2"), 2 * C, K2, B2, rng)
        _init_conv(root, "concat1.conv", rng, 3, 2 * C, 2 * C)
        _init_conv(root, "fuse1", rng, 3, C, C, groups=C)
        init_sa_module(root.scope("dec1"), C, K1, B1, rng)
        init_sa_module(root.scope("refine"), C, Kr, Br, rng)
    _init_conv(root, "skip", rng, 3, C, C, groups=C)
    _init_conv(root, "reconstruct", rng, 3, C, 2)
    return store


def _batched(x):
    x = as_tensor(x)
    if x.ndim == 3:
        return ops.reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected (Nr, Nt, 2) or (B, Nr, Nt, 2), got {x.shape}")
    return x, False


def _unbatch(y, squeeze):
    return ops.reshape(y, y.shape[1:]) if squeeze else y


def _check_input(x: Tensor, cfg: NetworkConfig):
    if x.shape[1:] != (cfg.Nr, cfg.Nt, 2):
        raise ValueError(f"input extents {x.shape[1:]} do not match config {(cfg.Nr, cfg.Nt, 2)}")


def embed(x: Tensor, params: ParamStore) -> Tensor:
    return _conv(params.scope(""), "embed", x)


def mssan_forward(x, params: ParamStore, cfg: NetworkConfig, trace: list | None = None) -> Tensor:
    """Full multi-scale forward pass; ``trace`` (optional list) collects ``(stage, shape)``."""
    x, squeeze = _batched(x)
    _check_input(x, cfg)
    if cfg.Nr % 4:
        raise ValueError(f"MsSAN needs Nr divisible by 4, got {cfg.Nr}")
    root = params.scope("")
    B1, B2, B3, Br = cfg.blocks
    K1, K2, K3, Kr = cfg.heads
    eps = cfg.ln_eps

    def note(name, t):
        if trace is not None:
            trace.append((name, tuple(t.shape[1:])))
        return t

    F0 = note("embed", embed(x, params))
    E1 = note("enc1", sa_module(F0, root.scope("enc1"), K1, B1, eps))
    E2 = note("enc2", sa_module(antenna_split(E1, root.scope("split1")), root.scope("enc2"), K2, B2, eps))
    E3 = note("enc3", sa_module(antenna_split(E2, root.scope("split2")), root.scope("enc3"), K3, B3, eps))
    up3 = antenna_concat(E3, root.scope("concat2"))
    D2 = _conv(root, "fuse2", ops.add(E2, up3), groups=E2.shape[-1])
    D2 = note("dec2", sa_module(D2, root.scope("dec2"), K2, B2, eps))
    up2 = antenna_concat(D2, root.scope("concat1"))
    D1 = _conv(root, "fuse1", ops.add(E1, up2), groups=E1.shape[-1])
    D1 = note("dec1", sa_module(D1, root.scope("dec1"), K1, B1, eps))
    R = note("refine", sa_module(D1, root.scope("refine"), Kr, Br, eps))
    fused = ops.add(_conv(root, "skip", F0, groups=F0.shape[-1]), R)
    out = note("output", _conv(root, "reconstruct", fused))
    return _unbatch(out, squeeze)


def san_forward(x, params: ParamStore, cfg: NetworkConfig) -> Tensor:
    x, squeeze = _batched(x)
    _check_input(x, cfg)
    root = params.scope("")
    F0 = embed(x, params)
    S = sa_module(F0, root.scope("sa"), cfg.san_heads, cfg.san_blocks, cfg.ln_eps)
    fused = ops.add(_conv(root, "skip", F0, groups=F0.shape[-1]), S)
    return _unbatch(_conv(root, "reconstruct", fused), squeeze)


def cnn_baseline_forward(x, params: ParamStore, cfg: NetworkConfig) -> Tensor:
    x, squeeze = _batched(x)
    _check_input(x, cfg)
    root = params.scope("")
    h = x
    for i in range(cfg.cnn_depth):
        h = ops.gelu(_conv(root, f"conv{i}", h))
    return _unbatch(ops.add(x, _conv(root, "head", h)), squeeze)


def forward(x, params: ParamStore, cfg: NetworkConfig) -> Tensor:
    if cfg.variant == "mssan":
        return mssan_forward(x, params, cfg)
    if cfg.variant == "san":
        return san_forward(x, params, cfg)
    return cnn_baseline_forward(x, params, cfg)


def stage_shapes(cfg: NetworkConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Per-stage feature extents of the MsSAN pipeline (computed analytically)."""
    C, Nr, Nt = cfg.embed_features, cfg.Nr, cfg.Nt
    return [
        ("input", (Nr, Nt, 2)),
        ("embed", (Nr, Nt, C)),
        ("enc1", (Nr, Nt, C)),
        ("enc2", (Nr // 2, Nt, 2 * C)),
        ("enc3", (Nr // 4, Nt, 4 * C)),
        ("dec2", (Nr // 2, Nt, 2 * C)),
        ("dec1", (Nr, Nt, C)),
        ("refine", (Nr, Nt, C)),
        ("output", (Nr, Nt, 2)),
    ]


def describe(cfg: NetworkConfig, params: ParamStore | None = None) -> str:
    params = init_params(cfg) if params is None else params
    lines = [f"variant: {cfg.variant}", f"input: (Nr={cfg.Nr}, Nt={cfg.Nt}, 2)",
             f"embedding features C: {cfg.embed_features}"]
    if cfg.variant == "mssan":
        lines.append("SA blocks {B1,B2,B3,Br}: {%s}" % ",".join(map(str, cfg.blocks)))
        lines.append("heads {K1,K2,K3,Kr}: {%s}" % ",".join(map(str, cfg.heads)))
        lines.append("stage shapes:")
        for name, shp in stage_shapes(cfg):
            lines.append(f"  {name:<8s} {shp}")
    elif cfg.variant == "san":
        lines.append(f"SA blocks: {cfg.san_blocks}, heads: {cfg.san_heads}")
    else:
        lines.append(f"conv depth: {cfg.cnn_depth}")
    groups: dict[str, int] = {}
    for path, t in params.items():
        top = path.split(".")[0]
        groups[top] = groups.get(top, 0) + t.data.size
    lines.append("parameters:")
    for top, n in groups.items():
        lines.append(f"  {top:<12s} {n}")
    lines.append(f"  {'total':<12s} {params.num_parameters()}")
    return "\n".join(lines)
