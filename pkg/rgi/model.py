"""
Residual 1-D convolutional estimator with exact hand-written gradients.

Trunk: stem conv (k7, s2) then four stages of [identity residual unit,
k3/s2 downsampling conv], 64 channels throughout, no normalization layers.
Heads: a 1x1 conv + global average pooling gives the raw wall matrix (8x4);
a second 1x1 conv + GAP + sigmoid gives the wall presence probabilities.
"""

from __future__ import annotations

import itertools
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit

from rgi.errors import BadMagic, CacheMismatch, IoFailure, ShapeMismatch, TruncatedFile, VersionMismatch

logger = logging.getLogger(__name__)

IN_CHANNELS = 32
IN_TAPS = 1024
WIDTH = 64
STAGES = 4
WPRIME = 8
PLANE_DIM = 4

CKPT_MAGIC = b"RGIW"
CKPT_VERSION = 1


def _param_shapes() -> dict:
    shapes = {"stem.w": (WIDTH, IN_CHANNELS, 7), "stem.b": (WIDTH,)}
    for s in range(STAGES):
        for conv in ("conv_a", "conv_b", "down"):
            shapes[f"stage{s}.{conv}.w"] = (WIDTH, WIDTH, 3)
            shapes[f"stage{s}.{conv}.b"] = (WIDTH,)
    shapes["wpe.w"] = (WPRIME * PLANE_DIM, WIDTH, 1)
    shapes["wpe.b"] = (WPRIME * PLANE_DIM,)
    shapes["eval.w"] = (WPRIME, WIDTH, 1)
    shapes["eval.b"] = (WPRIME,)
    return shapes


PARAM_SHAPES = _param_shapes()
PARAM_COUNT = sum(int(np.prod(shape)) for shape in PARAM_SHAPES.values())

_uids = itertools.count()


class NetworkParams:
    """Named weight tensors in a fixed order, held in float64.

    `version` is bumped on every in-place update so stale forward caches can
    be detected.
    """

    def __init__(self, tensors: dict):
        names = list(tensors)
        if names != list(PARAM_SHAPES):
            raise ShapeMismatch(f"Expected tensors {list(PARAM_SHAPES)}, got {names}")
        self.tensors = {}
        for name, shape in PARAM_SHAPES.items():
            t = np.array(tensors[name], dtype=np.float64)
            if t.shape != shape:
                raise ShapeMismatch(f"Tensor '{name}' has shape {t.shape}, expected {shape}")
            if not np.isfinite(t).all():
                raise ShapeMismatch(f"Tensor '{name}' holds non-finite values")
            self.tensors[name] = t
        self.uid = next(_uids)
        self.version = 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def names(self) -> list:
        return list(self.tensors)

    @property
    def count(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self) -> "NetworkParams":
        return NetworkParams({name: t.copy() for name, t in self.tensors.items()})

    def bump(self) -> None:
        self.version += 1

    @classmethod
    def zeros(cls) -> "NetworkParams":
        return cls({name: np.zeros(shape) for name, shape in PARAM_SHAPES.items()})


def init_params(seed: int) -> NetworkParams:
    """Uniform weights in [-sqrt(6/fan_in), sqrt(6/fan_in)], zero biases."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in PARAM_SHAPES.items():
        if name.endswith(".b"):
            tensors[name] = np.zeros(shape)
        else:
            bound = np.sqrt(6.0 / (shape[1] * shape[2]))
            tensors[name] = rng.uniform(-bound, bound, size=shape)
    return NetworkParams(tensors)


@dataclass
class NetworkOutput:
    A_tilde: np.ndarray
    p_hat: np.ndarray
    A_hat: np.ndarray


@dataclass
class ForwardCache:
    params_uid: int
    params_version: int
    batch: int
    single: bool
    input_shape: tuple
    layers: dict = field(default_factory=dict)
    A_tilde: np.ndarray = None
    p_hat: np.ndarray = None


def _relu(x):
    return np.maximum(x, 0.0)


def _conv_forward(x, w, b, stride: int, pad: int):
    """x (B, C, L), w (O, C, K) -> (B, O, L_out) and the input windows."""
    k = w.shape[2]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad))) if pad else x
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride, :]
    out = np.einsum("bclk,ock->bol", win, w, optimize=True) + b[None, :, None]
    return out, win


def _conv_backward(dout, x_shape, win, w, stride: int, pad: int, need_dx: bool = True):
    dw = np.einsum("bol,bclk->ock", dout, win, optimize=True)
    db = dout.sum(axis=(0, 2))
    if not need_dx:
        return None, dw, db

    k = w.shape[2]
    batch, channels, length = x_shape
    lout = dout.shape[2]
    dwin = np.einsum("bol,ock->bclk", dout, w, optimize=True)
    dxp = np.zeros((batch, channels, length + 2 * pad))
    for j in range(k):
        dxp[:, :, j : j + stride * (lout - 1) + 1 : stride] += dwin[:, :, :, j]
    dx = dxp[:, :, pad : pad + length] if pad else dxp
    return dx, dw, db


def forward(params: NetworkParams, x) -> tuple:
    """Run the network on one (32, 1024) input or a (B, 32, 1024) batch.

    Returns (NetworkOutput, ForwardCache); outputs keep the batch axis only
    when the input had one.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if x.ndim != 3 or x.shape[1:] != (IN_CHANNELS, IN_TAPS):
        raise ShapeMismatch(f"Expected input (32, 1024) or (B, 32, 1024), got {x.shape}")

    t = params.tensors
    cache = ForwardCache(
        params_uid=params.uid,
        params_version=params.version,
        batch=x.shape[0],
        single=single,
        input_shape=x.shape,
    )

    z, win = _conv_forward(x, t["stem.w"], t["stem.b"], stride=2, pad=3)
    h = _relu(z)
    cache.layers["stem"] = {"win": win, "out": h}

    for s in range(STAGES):
        pre = f"stage{s}"
        a_pre, win_a = _conv_forward(h, t[f"{pre}.conv_a.w"], t[f"{pre}.conv_a.b"], 1, 1)
        a = _relu(a_pre)
        b_pre, win_b = _conv_forward(a, t[f"{pre}.conv_b.w"], t[f"{pre}.conv_b.b"], 1, 1)
        r = _relu(b_pre + h)
        d_pre, win_d = _conv_forward(r, t[f"{pre}.down.w"], t[f"{pre}.down.b"], 2, 1)
        h_next = _relu(d_pre)
        cache.layers[pre] = {
            "in_shape": h.shape, "win_a": win_a, "a": a, "win_b": win_b,
            "r": r, "win_d": win_d, "out": h_next,
        }
        h = h_next

    zw, win_w = _conv_forward(h, t["wpe.w"], t["wpe.b"], 1, 0)
    A_tilde = zw.mean(axis=2).reshape(-1, WPRIME, PLANE_DIM)
    ze, win_e = _conv_forward(h, t["eval.w"], t["eval.b"], 1, 0)
    p_hat = expit(ze.mean(axis=2))
    A_hat = p_hat[:, :, None] * A_tilde

    cache.layers["heads"] = {"h": h, "win_w": win_w, "win_e": win_e}
    cache.A_tilde, cache.p_hat = A_tilde, p_hat

    if single:
        return NetworkOutput(A_tilde[0], p_hat[0], A_hat[0]), cache
    return NetworkOutput(A_tilde, p_hat, A_hat), cache


def backward(params: NetworkParams, cache: ForwardCache, d_A_hat, d_p_hat) -> dict:
    """Parameter gradients given dL/dA_hat and the direct dL/dp_hat term."""
    if cache.params_uid != params.uid or cache.params_version != params.version:
        raise CacheMismatch("Forward cache was produced with different or since-updated parameters")
    d_A_hat = np.asarray(d_A_hat, dtype=np.float64)
    d_p_hat = np.asarray(d_p_hat, dtype=np.float64)
    if cache.single:
        d_A_hat, d_p_hat = d_A_hat[None], d_p_hat[None]
    if d_A_hat.shape != (cache.batch, WPRIME, PLANE_DIM) or d_p_hat.shape != (cache.batch, WPRIME):
        raise CacheMismatch(
            f"Output gradients {d_A_hat.shape}/{d_p_hat.shape} do not match a batch of {cache.batch}"
        )

    t = params.tensors
    grads = {}
    p, A_tilde = cache.p_hat, cache.A_tilde

    # A_hat = Diag(p) A_tilde feeds both heads
    d_A_tilde = p[:, :, None] * d_A_hat
    d_p = d_p_hat + (d_A_hat * A_tilde).sum(axis=2)
    d_logits = d_p * p * (1.0 - p)

    heads = cache.layers["heads"]
    h = heads["h"]
    frames = h.shape[2]
    d_ze = np.broadcast_to(d_logits[:, :, None] / frames, (cache.batch, WPRIME, frames))
    dh_e, grads["eval.w"], grads["eval.b"] = _conv_backward(d_ze, h.shape, heads["win_e"], t["eval.w"], 1, 0)
    d_zw = np.broadcast_to(
        d_A_tilde.reshape(cache.batch, -1)[:, :, None] / frames, (cache.batch, WPRIME * PLANE_DIM, frames)
    )
    dh_w, grads["wpe.w"], grads["wpe.b"] = _conv_backward(d_zw, h.shape, heads["win_w"], t["wpe.w"], 1, 0)
    dh = dh_e + dh_w

    for s in reversed(range(STAGES)):
        pre = f"stage{s}"
        c = cache.layers[pre]
        d_down = dh * (c["out"] > 0)
        dr, grads[f"{pre}.down.w"], grads[f"{pre}.down.b"] = _conv_backward(
            d_down, c["r"].shape, c["win_d"], t[f"{pre}.down.w"], 2, 1
        )
        d_sum = dr * (c["r"] > 0)
        da, grads[f"{pre}.conv_b.w"], grads[f"{pre}.conv_b.b"] = _conv_backward(
            d_sum, c["a"].shape, c["win_b"], t[f"{pre}.conv_b.w"], 1, 1
        )
        da = da * (c["a"] > 0)
        dh_a, grads[f"{pre}.conv_a.w"], grads[f"{pre}.conv_a.b"] = _conv_backward(
            da, c["in_shape"], c["win_a"], t[f"{pre}.conv_a.w"], 1, 1
        )
        dh = d_sum + dh_a

    stem = cache.layers["stem"]
    dz = dh * (stem["out"] > 0)
    _, grads["stem.w"], grads["stem.b"] = _conv_backward(
        dz, cache.input_shape, stem["win"], t["stem.w"], 2, 3, need_dx=False
    )
    return {name: grads[name] for name in PARAM_SHAPES}


def save_checkpoint(path, params: NetworkParams) -> Path:
    """Write tensors as little-endian float32 with a small self-describing header."""
    path = Path(path)
    chunks = [struct.pack("<4sII", CKPT_MAGIC, CKPT_VERSION, len(params.tensors))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)) + encoded)
        chunks.append(struct.pack("<B", tensor.ndim) + struct.pack(f"<{tensor.ndim}I", *tensor.shape))
        chunks.append(tensor.astype("<f4").tobytes())
    try:
        path.write_bytes(b"".join(chunks))
    except OSError as e:
        raise IoFailure(f"Cannot write checkpoint '{path}': {e}") from e
    return path


class _Reader:
    def __init__(self, raw: bytes, source):
        self.raw, self.pos, self.source = raw, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise TruncatedFile(f"Checkpoint '{self.source}' ends early at byte {len(self.raw)}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path) -> NetworkParams:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IoFailure(f"Cannot read checkpoint '{path}': {e}") from e

    reader = _Reader(raw, path)
    magic, version, count = reader.unpack("<4sII")
    if magic != CKPT_MAGIC:
        raise BadMagic(f"Not an rgi checkpoint (magic {magic!r}, expected {CKPT_MAGIC!r})")
    if version != CKPT_VERSION:
        raise VersionMismatch(f"Checkpoint format v{version}, this build reads v{CKPT_VERSION}")

    tensors = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<H")
        name = reader.take(name_len).decode("utf-8")
        (rank,) = reader.unpack("<B")
        shape = reader.unpack(f"<{rank}I") if rank else ()
        size = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").reshape(shape)
        tensors[name] = data.astype(np.float64)
    return NetworkParams(tensors)
