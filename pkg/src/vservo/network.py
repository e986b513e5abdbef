"""Pose-regression network: shared trunk, three heads, encoder variants.

The trunk is a from-scratch stack of 3x3 stride-2 convolutions (widths
8/16/32/64), each followed by per-sample channel standardization and a
rectifier, pooled to a 128-dim feature vector by global averaging plus an
affine projection.  Three encoder wirings are supported:

* ``single``        — the two images are concatenated channel-wise at the
                      input and pass through one stack;
* ``siamese``       — each image passes through the full shared stack and the
                      pooled features are concatenated;
* ``shared_concat`` — (default) the first two conv layers are shared per
                      image, feature maps are concatenated depth-wise, and
                      two more conv layers follow.

Heads: two regression heads (128 -> 64 -> 6, translation + axis-angle) and a
single-affine-layer binary classification head (128 -> 2).

The forward pass is functional: weights are a name -> Tensor mapping, so the
same code serves plain training, adapted (meta) parameters, and inference.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from vservo import autodiff as ad
from vservo.errors import (
    ChecksumMismatch,
    FormatVersionMismatch,
    IoFailure,
    ShapeMismatch,
)
from vservo.kernels import patch_grid
from vservo.streams import stream

__all__ = [
    "EncoderVariant",
    "HeadId",
    "NetConfig",
    "ModelParams",
    "group_shapes",
    "count_params",
    "init_params",
    "forward_weights",
    "forward",
    "flatten_params",
    "unflatten_params",
    "normalize_images",
    "serialize_model",
    "deserialize_model",
    "save_model",
    "load_model",
]

_STD_EPS = 1e-5


class EncoderVariant(enum.IntEnum):
    SINGLE = 0
    SIAMESE = 1
    SHARED_CONCAT = 2


class HeadId(enum.Enum):
    REG_LSD = "reg_lsd"
    REG_SSD = "reg_ssd"
    CLS = "cls"


_HEAD_GROUP = {HeadId.REG_LSD: "head_lsd", HeadId.REG_SSD: "head_ssd", HeadId.CLS: "head_cls"}


@dataclass(frozen=True)
class NetConfig:
    image_size: int = 64
    widths: tuple[int, int, int, int] = (8, 16, 32, 64)
    feature_dim: int = 128
    head_hidden: int = 64
    variant: EncoderVariant = EncoderVariant.SHARED_CONCAT


def group_shapes(cfg: NetConfig) -> dict[str, tuple[int, ...]]:
    """Parameter-group shapes; a pure function of the configuration."""
    w1, w2, w3, w4 = cfg.widths
    v = cfg.variant
    shapes: dict[str, tuple[int, ...]] = {}

    in1 = 6 if v == EncoderVariant.SINGLE else 3
    shapes["trunk.conv1.w"] = (9 * in1, w1)
    shapes["trunk.conv1.b"] = (w1,)
    shapes["trunk.conv2.w"] = (9 * w1, w2)
    shapes["trunk.conv2.b"] = (w2,)
    in3 = 2 * w2 if v == EncoderVariant.SHARED_CONCAT else w2
    shapes["trunk.conv3.w"] = (9 * in3, w3)
    shapes["trunk.conv3.b"] = (w3,)
    shapes["trunk.conv4.w"] = (9 * w3, w4)
    shapes["trunk.conv4.b"] = (w4,)
    pooled = 2 * w4 if v == EncoderVariant.SIAMESE else w4
    shapes["trunk.proj.w"] = (pooled, cfg.feature_dim)
    shapes["trunk.proj.b"] = (cfg.feature_dim,)

    for head in ("head_lsd", "head_ssd"):
        shapes[f"{head}.fc1.w"] = (cfg.feature_dim, cfg.head_hidden)
        shapes[f"{head}.fc1.b"] = (cfg.head_hidden,)
        shapes[f"{head}.fc2.w"] = (cfg.head_hidden, 6)
        shapes[f"{head}.fc2.b"] = (6,)
    shapes["head_cls.fc.w"] = (cfg.feature_dim, 2)
    shapes["head_cls.fc.b"] = (2,)
    return shapes


def count_params(cfg: NetConfig) -> int:
    return sum(int(np.prod(s)) for s in group_shapes(cfg).values())


@dataclass
class ModelParams:
    """Named parameter store plus everything needed to run the net."""

    config: NetConfig
    groups: dict[str, np.ndarray]
    norm_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    norm_std: np.ndarray = field(default_factory=lambda: np.ones(3))
    s_hat: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.copy() for k, v in self.groups.items()},
            self.norm_mean.copy(),
            self.norm_std.copy(),
            self.s_hat.copy(),
        )

    def head_group_names(self, head: HeadId) -> list[str]:
        prefix = _HEAD_GROUP[head] + "."
        return [k for k in self.groups if k.startswith(prefix)]

    def trunk_group_names(self) -> list[str]:
        return [k for k in self.groups if k.startswith("trunk.")]


def init_params(cfg: NetConfig, seed: int) -> ModelParams:
    """Fan-in scaled uniform weights, zero biases, seed-controlled."""
    groups = {}
    for name, shape in group_shapes(cfg).items():
        if name.endswith(".b"):
            groups[name] = np.zeros(shape)
        else:
            limit = 1.0 / np.sqrt(shape[0])
            groups[name] = stream(seed, "init", name).uniform(-limit, limit, size=shape)
    return ModelParams(cfg, groups)


def flatten_params(params: ModelParams) -> np.ndarray:
    return np.concatenate([params.groups[k].reshape(-1) for k in params.groups])


def unflatten_params(params: ModelParams, flat: np.ndarray) -> ModelParams:
    total = sum(v.size for v in params.groups.values())
    if flat.size != total:
        raise ShapeMismatch(f"flat vector has {flat.size} entries, expected {total}")
    out = params.copy()
    pos = 0
    for k in out.groups:
        size = out.groups[k].size
        out.groups[k] = flat[pos : pos + size].reshape(out.groups[k].shape).copy()
        pos += size
    return out


def _to_float_batch(images: np.ndarray, size: int) -> np.ndarray:
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4 or arr.shape[1] != size or arr.shape[2] != size or arr.shape[3] != 3:
        raise ShapeMismatch(f"expected (n, {size}, {size}, 3) images, got {arr.shape}")
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


def _standardize(x: ad.Tensor) -> ad.Tensor:
    # Per-sample, per-channel standardization over the spatial extent.
    # A 1x1 map would standardize to exactly zero, so pass it through.
    if x.shape[1] * x.shape[2] == 1:
        return x
    return ad.standardize_hw(x, _STD_EPS)


def _conv(weights, name: str, x: ad.Tensor, stride: int = 2, pad: int = 1) -> ad.Tensor:
    n, h, w, _ = x.shape
    wt, bt = weights[f"{name}.w"], weights[f"{name}.b"]
    patches = ad.gather_patches(x, 3, stride, pad)
    y = ad.add(ad.matmul(patches, wt), bt)
    oh, ow = patch_grid(h, w, 3, stride, pad)
    y = ad.reshape(y, (n, oh, ow, int(wt.shape[1])))
    return ad.relu(_standardize(y))


def _affine(weights, name: str, x: ad.Tensor) -> ad.Tensor:
    return ad.add(ad.matmul(x, weights[f"{name}.w"]), weights[f"{name}.b"])


def _gap(x: ad.Tensor) -> ad.Tensor:
    return ad.tmean(x, axis=(1, 2))


def encode_weights(weights, cfg: NetConfig, ref: ad.Tensor, cur: ad.Tensor) -> ad.Tensor:
    """Trunk forward pass: normalized image batches -> (n, feature_dim)."""
    v = cfg.variant

    if v == EncoderVariant.SINGLE:
        x = ad.concat_last([ref, cur])
        for layer in ("trunk.conv1", "trunk.conv2", "trunk.conv3", "trunk.conv4"):
            x = _conv(weights, layer, x)
        pooled = _gap(x)
    elif v == EncoderVariant.SIAMESE:
        feats = []
        for x in (ref, cur):
            for layer in ("trunk.conv1", "trunk.conv2", "trunk.conv3", "trunk.conv4"):
                x = _conv(weights, layer, x)
            feats.append(_gap(x))
        pooled = ad.concat_last(feats)
    elif v == EncoderVariant.SHARED_CONCAT:
        streams = []
        for x in (ref, cur):
            x = _conv(weights, "trunk.conv1", x)
            x = _conv(weights, "trunk.conv2", x)
            streams.append(x)
        x = ad.concat_last(streams)
        x = _conv(weights, "trunk.conv3", x)
        x = _conv(weights, "trunk.conv4", x)
        pooled = _gap(x)
    else:  # pragma: no cover
        raise ValueError(f"unknown encoder variant {v!r}")

    return ad.relu(_affine(weights, "trunk.proj", pooled))


def head_weights(weights, feat: ad.Tensor, head: HeadId) -> ad.Tensor:
    """Head forward pass on an encoded feature batch."""
    if head == HeadId.CLS:
        return _affine(weights, "head_cls.fc", feat)
    group = _HEAD_GROUP[head]
    hidden = ad.relu(_affine(weights, f"{group}.fc1", feat))
    return _affine(weights, f"{group}.fc2", hidden)


def forward_weights(
    weights,
    cfg: NetConfig,
    ref: ad.Tensor,
    cur: ad.Tensor,
    head: HeadId,
) -> ad.Tensor:
    """Functional forward pass on normalized float image batches."""
    weights = {k: ad.as_tensor(v) for k, v in weights.items()}
    return head_weights(weights, encode_weights(weights, cfg, ref, cur), head)


def normalize_images(params: ModelParams, images: np.ndarray) -> np.ndarray:
    x = _to_float_batch(images, params.config.image_size)
    return (x - params.norm_mean) / params.norm_std


def forward(params: ModelParams, pair, head: HeadId) -> np.ndarray:
    """Inference on one image pair or a pair of batches; returns raw head output."""
    ref, cur = pair
    single = np.asarray(ref).ndim == 3
    with ad.no_grad():
        out = forward_weights(
            params.groups,
            params.config,
            ad.Tensor(normalize_images(params, ref)),
            ad.Tensor(normalize_images(params, cur)),
            head,
        )
    return out.data[0] if single else out.data


_MODEL_MAGIC = b"VSNN"
_MODEL_VERSION = 1


def serialize_model(params: ModelParams) -> bytes:
    cfg = params.config
    out = [
        _MODEL_MAGIC,
        struct.pack(
            "<HBHHHHHH",
            _MODEL_VERSION,
            int(cfg.variant),
            cfg.image_size,
            *cfg.widths,
            cfg.feature_dim,
        ),
        struct.pack("<H", cfg.head_hidden),
        params.norm_mean.astype("<f8").tobytes(),
        params.norm_std.astype("<f8").tobytes(),
        struct.pack("<H", params.s_hat.size),
        params.s_hat.astype("<f8").tobytes(),
        struct.pack("<I", len(params.groups)),
    ]
    for name, arr in params.groups.items():
        blob = name.encode("utf-8")
        out.append(struct.pack("<H", len(blob)))
        out.append(blob)
        out.append(struct.pack("<B", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.astype("<f8").tobytes())
    payload = b"".join(out)
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_model(params: ModelParams, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(serialize_model(params))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def deserialize_model(blob: bytes) -> ModelParams:
    if len(blob) < 8:
        raise ChecksumMismatch("model blob too short")
    payload, crc = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if crc != zlib.crc32(payload):
        raise ChecksumMismatch("CRC32 mismatch")
    if payload[:4] != _MODEL_MAGIC:
        raise FormatVersionMismatch("bad magic")
    pos = 4
    version, variant, size, w1, w2, w3, w4, feature = struct.unpack_from("<HBHHHHHH", payload, pos)
    pos += struct.calcsize("<HBHHHHHH")
    if version != _MODEL_VERSION:
        raise FormatVersionMismatch(f"unsupported version {version}")
    (head_hidden,) = struct.unpack_from("<H", payload, pos)
    pos += 2
    cfg = NetConfig(size, (w1, w2, w3, w4), feature, head_hidden, EncoderVariant(variant))
    norm_mean = np.frombuffer(payload, "<f8", 3, pos).astype(np.float64)
    pos += 24
    norm_std = np.frombuffer(payload, "<f8", 3, pos).astype(np.float64)
    pos += 24
    (n_s,) = struct.unpack_from("<H", payload, pos)
    pos += 2
    s_hat = np.frombuffer(payload, "<f8", n_s, pos).astype(np.float64)
    pos += 8 * n_s
    (n_groups,) = struct.unpack_from("<I", payload, pos)
    pos += 4
    groups = {}
    for _ in range(n_groups):
        (name_len,) = struct.unpack_from("<H", payload, pos)
        pos += 2
        name = payload[pos : pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", payload, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", payload, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        groups[name] = np.frombuffer(payload, "<f8", count, pos).reshape(shape).astype(np.float64)
        pos += 8 * count
    if pos != len(payload):
        raise ChecksumMismatch("trailing bytes after parameter groups")
    return ModelParams(cfg, groups, norm_mean, norm_std, s_hat)


def load_model(path) -> ModelParams:
    try:
        with open(path, "rb") as fh:
            return deserialize_model(fh.read())
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
