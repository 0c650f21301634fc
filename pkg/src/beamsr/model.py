"""Wide-activation residual refinement network and its on-disk format.

The network never changes the image size: it takes the cubic-convolution
reconstruction (batch x 1 x L x D) and predicts a correction on top of it
through a global skip path.

Model file layout (little-endian)::

    b"USRM" | u32 version | u32 blocks | u32 width | u32 expansion
    | u32 kernel | f64 norm_mean | f32 tensors (v, g, b per conv, in
    declaration order) | u64 checksum

The checksum is an 8-byte BLAKE2b digest of every preceding byte.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from beamsr.core import SamplingScheme
from beamsr.errors import DataError, FormatError, NumericalDivergence, SchemeMismatch
from beamsr.netmath import (
    ConvGrads,
    ConvParams,
    conv2d_backward,
    conv2d_forward,
    relu_backward,
    relu_forward,
)

MAGIC = b"USRM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIId")
_CHECKSUM = struct.Struct("<Q")

KERNEL_FOR_STRIDE = {2: 3, 4: 5}
# initial gains: residual branches start damped, the tail nearly silent
RESIDUAL_GAIN = 0.1
TAIL_GAIN = 0.01


@dataclass(frozen=True)
class ModelConfig:
    blocks: int = 8
    width: int = 10
    expansion: int = 4
    kernel: int = 3
    norm_mean: float = 0.0
    # reference layer count: head + 2 per block + tail (+ skip)
    conv_layers: int = 16
    kernels_per_layer: int = 10

    def __post_init__(self):
        if self.blocks < 1:
            raise DataError("need at least one residual block")
        if self.width < 1 or self.expansion < 1:
            raise DataError("width and expansion must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise DataError(f"kernel must be odd, got {self.kernel}")

    @classmethod
    def for_scheme(cls, scheme: SamplingScheme, **kw) -> "ModelConfig":
        return cls(kernel=KERNEL_FOR_STRIDE[scheme.stride], **kw)

    @property
    def wide(self) -> int:
        return self.width * self.expansion

    def check_scheme(self, scheme: SamplingScheme) -> None:
        want = KERNEL_FOR_STRIDE[scheme.stride]
        if self.kernel != want:
            raise SchemeMismatch(
                f"kernel/scheme mismatch: model uses {self.kernel}x{self.kernel} kernels, "
                f"scheme {scheme} needs {want}x{want}"
            )

    def scheme(self) -> SamplingScheme:
        for stride, k in KERNEL_FOR_STRIDE.items():
            if k == self.kernel:
                return SamplingScheme(stride)
        raise SchemeMismatch(f"no sampling scheme uses {self.kernel}x{self.kernel} kernels")


def _conv_shapes(cfg: ModelConfig) -> list[tuple[int, int]]:
    """(in, out) channels of every convolution in declaration order."""
    shapes = [(1, cfg.width)]
    for _ in range(cfg.blocks):
        shapes += [(cfg.width, cfg.wide), (cfg.wide, cfg.width)]
    shapes += [(cfg.width, 1), (1, 1)]
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    k2 = cfg.kernel * cfg.kernel
    return sum(o * i * k2 + 2 * o for i, o in _conv_shapes(cfg))


@dataclass
class SrModel:
    config: ModelConfig
    head: ConvParams
    blocks: list[tuple[ConvParams, ConvParams]]
    tail: ConvParams
    skip: ConvParams

    def layers(self) -> list[ConvParams]:
        out = [self.head]
        for expand, project in self.blocks:
            out += [expand, project]
        return out + [self.tail, self.skip]

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers() for a in layer.arrays()]

    def parameter_count(self) -> int:
        return sum(a.size for a in self.arrays())

    def astype(self, dtype) -> "SrModel":
        return SrModel(
            self.config,
            self.head.astype(dtype),
            [(e.astype(dtype), p.astype(dtype)) for e, p in self.blocks],
            self.tail.astype(dtype),
            self.skip.astype(dtype),
        )

    def copy(self) -> "SrModel":
        return self.astype(self.head.v.dtype)

    def with_norm_mean(self, norm_mean: float) -> "SrModel":
        m = self.copy()
        m.config = replace(self.config, norm_mean=float(norm_mean))
        return m

    def load_arrays(self, values: list[np.ndarray]) -> None:
        """Copy ``values`` into the parameter arrays in place."""
        arrays = self.arrays()
        if len(values) != len(arrays):
            raise DataError("parameter list length mismatch")
        for dst, src in zip(arrays, values):
            dst[...] = src


def _he_conv(rng: np.random.Generator, c_in: int, c_out: int, k: int, dtype) -> ConvParams:
    fan_in = c_in * k * k
    v = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k))
    g = np.sqrt(np.sum(v * v, axis=(1, 2, 3)))
    return ConvParams(v.astype(dtype), g.astype(dtype), np.zeros(c_out, dtype=dtype))


def _identity_conv(k: int, dtype) -> ConvParams:
    v = np.zeros((1, 1, k, k), dtype=dtype)
    v[0, 0, k // 2, k // 2] = 1.0
    return ConvParams(v, np.ones(1, dtype=dtype), np.zeros(1, dtype=dtype))


def model_init(config: ModelConfig, seed: int = 0, dtype=np.float32) -> SrModel:
    """He-scaled random weights, with damped residual branches and a near-zero tail.

    The global skip starts as an exact identity, so the untrained network
    returns (almost) its input.
    """
    rng = np.random.default_rng(seed)
    k = config.kernel
    head = _he_conv(rng, 1, config.width, k, dtype)
    blocks = []
    for _ in range(config.blocks):
        expand = _he_conv(rng, config.width, config.wide, k, dtype)
        project = _he_conv(rng, config.wide, config.width, k, dtype)
        project.g *= RESIDUAL_GAIN
        blocks.append((expand, project))
    tail = _he_conv(rng, config.width, 1, k, dtype)
    tail.g[...] = TAIL_GAIN
    skip = _identity_conv(k, dtype)
    return SrModel(config, head, blocks, tail, skip)


def identity_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> SrModel:
    """A model whose output equals its input: zero tail gain and bias, identity skip."""
    m = model_init(config, seed, dtype)
    m.tail.g[...] = 0.0
    m.tail.b[...] = 0.0
    return m


@dataclass
class ForwardCache:
    x_norm: np.ndarray
    block_inputs: list[np.ndarray] = field(default_factory=list)
    block_hidden: list[np.ndarray] = field(default_factory=list)
    body_out: np.ndarray | None = None


def _as_batch(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != 1:
        raise DataError(f"model input must be (batch, 1, lines, depth), got {x.shape}")
    return x


def model_forward(m: SrModel, x, clamp: bool = False, return_cache: bool = False):
    """Run the network on a (batch, 1, L, D) tensor.

    ``clamp`` applies the inference-time [0, 1] clamp; training keeps it off so
    the loss sees the raw output.
    """
    x = _as_batch(x)
    xn = x - m.config.norm_mean
    cache = ForwardCache(xn)
    u = conv2d_forward(xn, m.head)
    for expand, project in m.blocks:
        cache.block_inputs.append(u)
        h = conv2d_forward(u, expand)
        cache.block_hidden.append(h)
        u = u + conv2d_forward(relu_forward(h), project)
    cache.body_out = u
    y = conv2d_forward(u, m.tail) + conv2d_forward(xn, m.skip) + m.config.norm_mean
    if not np.all(np.isfinite(y)):
        raise NumericalDivergence("numerical divergence: non-finite network output")
    if clamp:
        y = np.clip(y, 0.0, 1.0)
    return (y, cache) if return_cache else y


@dataclass
class ModelGrads:
    head: ConvGrads
    blocks: list[tuple[ConvGrads, ConvGrads]]
    tail: ConvGrads
    skip: ConvGrads
    input: np.ndarray

    def layers(self) -> list[ConvGrads]:
        out = [self.head]
        for e, p in self.blocks:
            out += [e, p]
        return out + [self.tail, self.skip]

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers() for a in layer.arrays()]


def model_backward(m: SrModel, x, upstream, cache: ForwardCache | None = None) -> ModelGrads:
    """Reverse pass for dLoss/dOutput = ``upstream`` (unclamped output)."""
    x = _as_batch(x)
    dy = np.asarray(upstream, dtype=np.float64)
    if dy.shape != x.shape:
        raise DataError(f"upstream gradient shape {dy.shape} differs from input {x.shape}")
    if cache is None:
        _, cache = model_forward(m, x, return_cache=True)
    g_skip, dxn = conv2d_backward(cache.x_norm, m.skip, dy)
    g_tail, du = conv2d_backward(cache.body_out, m.tail, dy)
    block_grads = []
    for (expand, project), u, h in zip(
        reversed(m.blocks), reversed(cache.block_inputs), reversed(cache.block_hidden)
    ):
        g_proj, dr = conv2d_backward(relu_forward(h), project, du)
        g_exp, du_inner = conv2d_backward(u, expand, relu_backward(h, dr))
        du = du + du_inner
        block_grads.append((g_exp, g_proj))
    block_grads.reverse()
    g_head, dxn_head = conv2d_backward(cache.x_norm, m.head, du)
    return ModelGrads(g_head, block_grads, g_tail, g_skip, dxn + dxn_head)


def predict(m: SrModel, images: np.ndarray, batch_size: int = 8,
            keep_acquired: bool = True) -> np.ndarray:
    """Clamped predictions for a stack of (n, L, D) up-sampled images.

    With ``keep_acquired`` the lines the probe measured (index mod s == 0,
    s taken from the kernel size) are copied from the input unchanged. The
    loss never supervises those lines, and the input holds them exactly.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise DataError(f"expected an (n, lines, depth) stack, got shape {images.shape}")
    out = np.empty_like(images)
    for i in range(0, len(images), batch_size):
        chunk = images[i : i + batch_size, None]
        out[i : i + batch_size] = model_forward(m, chunk, clamp=True)[:, 0]
    if keep_acquired:
        stride = m.config.scheme().stride
        out[:, ::stride] = np.clip(images[:, ::stride], 0.0, 1.0)
    return out


def model_save(m: SrModel, path) -> None:
    cfg = m.config
    buf = bytearray(
        _HEADER.pack(MAGIC, FORMAT_VERSION, cfg.blocks, cfg.width, cfg.expansion, cfg.kernel,
                     float(cfg.norm_mean))
    )
    for arr in m.arrays():
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    digest = hashlib.blake2b(bytes(buf), digest_size=8).digest()
    buf += digest
    Path(path).write_bytes(bytes(buf))


def model_load(path, scheme: SamplingScheme | None = None) -> SrModel:
    """Read a model file; with ``scheme`` given, reject models built for another scheme."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + _CHECKSUM.size:
        raise FormatError(f"{path}: truncated model file")
    magic, version, blocks, width, expansion, kernel, norm_mean = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}")
    body, digest = data[: -_CHECKSUM.size], data[-_CHECKSUM.size :]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise FormatError(f"{path}: checksum failure")
    try:
        cfg = ModelConfig(blocks=blocks, width=width, expansion=expansion, kernel=kernel,
                          norm_mean=norm_mean)
    except DataError as exc:
        raise FormatError(f"{path}: invalid config block ({exc})") from exc
    m = model_init(cfg, seed=0)
    arrays = m.arrays()
    expected = sum(a.size for a in arrays) * 4
    payload = body[_HEADER.size :]
    if len(payload) != expected:
        raise FormatError(f"{path}: truncated parameter block ({len(payload)} of {expected} bytes)")
    flat = np.frombuffer(payload, dtype="<f4")
    pos = 0
    for arr in arrays:
        arr[...] = flat[pos : pos + arr.size].reshape(arr.shape)
        pos += arr.size
    if scheme is not None:
        cfg.check_scheme(scheme)
    return m
