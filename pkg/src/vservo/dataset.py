"""LSD/SSD image-pair dataset generation and serialization.

Each sample is a (reference image, displaced image) pair rendered from the
same scene, labeled with the relative camera pose (translation + axis-angle)
between the two views.  Offsets are drawn half the time uniformly within the
per-component limits and half the time from a clipped zero-mean Gaussian
whose per-component sigma is itself uniform in (0, limit/3].

On-disk format (little endian): magic ``VSDS``, version u16, kind u8, count
u32, limits as 8 float64 (lo/hi per bound), master seed u64, width u16,
height u16, then per sample two raw RGB u8 images, 6 float64 label values,
origin byte, sampler byte; the file ends with a CRC32 of everything before.
"""

from __future__ import annotations

import enum
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from vservo.errors import (
    ChecksumMismatch,
    DegenerateView,
    FormatVersionMismatch,
    IoFailure,
    RejectionExhausted,
)
from vservo.geometry import (
    Pose,
    axis_angle_from_rotation,
    compose,
    relative_pose,
    rotation_from_axis_angle,
)
from vservo.scene import CameraIntrinsics, DrConfig, base_camera_rotation, make_scene, render
from vservo.streams import split_seed, stream

__all__ = [
    "DatasetKind",
    "SamplerTag",
    "OffsetLimits",
    "LSD_LIMITS",
    "SSD_LIMITS",
    "Sample",
    "Dataset",
    "sample_offset",
    "offset_to_pose",
    "generate_pair",
    "generate_dataset",
    "concat_datasets",
    "save_dataset",
    "serialize_dataset",
    "load_dataset",
    "NOMINAL_HEIGHT",
    "BASE_JITTER",
]

MAGIC = b"VSDS"
FORMAT_VERSION = 1
RETRY_BUDGET = 16

NOMINAL_HEIGHT = 0.6
BASE_JITTER = 0.05


class DatasetKind(enum.IntEnum):
    LSD = 0
    SSD = 1
    COMBINED = 2


class SamplerTag(enum.IntEnum):
    UNIFORM = 0
    GAUSSIAN = 1


@dataclass(frozen=True)
class OffsetLimits:
    """Symmetric per-component bounds: meters for translation, radians for rotation."""

    xy_translation: float
    z_translation: float
    xy_rotation: float
    z_rotation: float

    def __post_init__(self):
        if min(self.xy_translation, self.z_translation, self.xy_rotation, self.z_rotation) <= 0:
            raise ValueError("all offset bounds must be positive")

    def bounds6(self) -> np.ndarray:
        """Per-component bound vector (tx, ty, tz, rx, ry, rz)."""
        return np.array(
            [
                self.xy_translation,
                self.xy_translation,
                self.z_translation,
                self.xy_rotation,
                self.xy_rotation,
                self.z_rotation,
            ]
        )

    def contains(self, translation: np.ndarray, rotation: np.ndarray, slack: float = 0.0) -> bool:
        vec = np.concatenate([translation, rotation])
        return bool(np.all(np.abs(vec) <= self.bounds6() + slack))


LSD_LIMITS = OffsetLimits(0.30, 0.20, 0.15, 0.40)
SSD_LIMITS = OffsetLimits(0.05, 0.04, 0.05, 0.10)


@dataclass(frozen=True)
class Sample:
    """Training record: image pair, relative-pose label, provenance tags."""

    reference_image: np.ndarray  # uint8 (h, w, 3)
    current_image: np.ndarray  # uint8 (h, w, 3)
    translation: np.ndarray  # float64 (3,) meters
    rotation: np.ndarray  # float64 (3,) axis-angle, radians
    origin: DatasetKind
    sampler: SamplerTag

    def label6(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation])


@dataclass
class Dataset:
    kind: DatasetKind
    samples: list[Sample]
    master_seed: int
    limits: OffsetLimits
    width: int
    height: int
    dr: DrConfig | None = field(default=None)

    def __len__(self) -> int:
        return len(self.samples)


def sample_offset(limits: OffsetLimits, rng: np.random.Generator):
    """Draw one camera offset; returns (translation, axis_angle, sampler tag)."""
    bounds = limits.bounds6()
    if rng.random() < 0.5:
        vec = rng.uniform(-bounds, bounds)
        tag = SamplerTag.UNIFORM
    else:
        # sigma uniform in (0, bound/3]; draws clipped to the bound.
        sigma = (1.0 - rng.random(6)) * (bounds / 3.0)
        vec = np.clip(rng.normal(0.0, 1.0, size=6) * sigma, -bounds, bounds)
        tag = SamplerTag.GAUSSIAN
    return vec[:3].copy(), vec[3:].copy(), tag


def offset_to_pose(translation: np.ndarray, rotation: np.ndarray) -> Pose:
    return Pose(rotation_from_axis_angle(rotation), translation)


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(img * 255.0).astype(np.uint8)


def generate_pair(
    scene,
    base_pose: Pose,
    offset: tuple[np.ndarray, np.ndarray],
    intr: CameraIntrinsics,
) -> tuple[np.ndarray, np.ndarray]:
    """Render the (reference, current) pair for an offset from base_pose.

    The label is verified against the geometry module: the relative pose of
    the two rendering poses must equal the offset to within 1e-12.
    """
    translation, rotation = offset
    current_pose = compose(base_pose, offset_to_pose(translation, rotation))
    ref = render(scene, base_pose, intr)
    cur = render(scene, current_pose, intr)

    rel = relative_pose(base_pose, current_pose)
    t_err = np.max(np.abs(rel.translation - translation))
    r_err = np.max(np.abs(axis_angle_from_rotation(rel.rotation) - rotation))
    if max(t_err, r_err) > 1e-12:
        raise AssertionError(f"label/geometry mismatch: {t_err:.2e}, {r_err:.2e}")
    return _quantize(ref), _quantize(cur)


def _limits_for(kind: DatasetKind) -> OffsetLimits:
    if kind == DatasetKind.LSD:
        return LSD_LIMITS
    if kind == DatasetKind.SSD:
        return SSD_LIMITS
    raise ValueError(f"cannot generate data for kind {kind!r}")


def generate_dataset(
    kind: DatasetKind,
    n: int,
    master_seed: int,
    dr: DrConfig = DrConfig(),
    intr: CameraIntrinsics | None = None,
) -> Dataset:
    """Generate n samples; a fresh scene is drawn for every sample.

    Deterministic in (kind, n, master_seed, dr): every sample has its own
    seed-derived streams, independent of generation order.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    intr = intr or CameraIntrinsics.default()
    limits = _limits_for(kind)
    samples = []
    for i in range(n):
        scene = make_scene(split_seed(master_seed, "dataset-scene", kind.name, i), dr)
        rng = stream(master_seed, "dataset", kind.name, i)
        jitter = rng.uniform(-BASE_JITTER, BASE_JITTER, size=2)
        base = Pose(base_camera_rotation(), np.array([jitter[0], jitter[1], NOMINAL_HEIGHT]))
        for attempt in range(RETRY_BUDGET):
            translation, rotation, tag = sample_offset(limits, rng)
            try:
                ref, cur = generate_pair(scene, base, (translation, rotation), intr)
            except DegenerateView:
                continue
            samples.append(Sample(ref, cur, translation, rotation, kind, tag))
            break
        else:
            raise RejectionExhausted(f"sample {i}: {RETRY_BUDGET} degenerate renders in a row")
    return Dataset(kind, samples, int(master_seed), limits, intr.width, intr.height, dr)


def concat_datasets(*parts: Dataset) -> Dataset:
    """In-memory combination (LSD+SSD training mixes); keeps origin tags."""
    if not parts:
        raise ValueError("need at least one dataset")
    first = parts[0]
    samples = [s for p in parts for s in p.samples]
    kind = first.kind if all(p.kind == first.kind for p in parts) else DatasetKind.COMBINED
    limits = max((p.limits for p in parts), key=lambda l: l.xy_translation)
    return Dataset(kind, samples, first.master_seed, limits, first.width, first.height, first.dr)


_HEADER = struct.Struct("<4sHBI8dQHH")


def _serialize(d: Dataset) -> bytes:
    if len(d.samples) == 0:
        raise ValueError("refusing to save an empty dataset")
    b = d.limits.bounds6()
    lohi = []
    for bound in (b[0], b[2], b[3], b[5]):
        lohi.extend([-bound, bound])
    out = [
        _HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            int(d.kind),
            len(d.samples),
            *lohi,
            d.master_seed & 0xFFFFFFFFFFFFFFFF,
            d.width,
            d.height,
        )
    ]
    for s in d.samples:
        out.append(s.reference_image.tobytes())
        out.append(s.current_image.tobytes())
        out.append(s.label6().astype("<f8").tobytes())
        out.append(bytes([int(s.origin), int(s.sampler)]))
    payload = b"".join(out)
    return payload + struct.pack("<I", zlib.crc32(payload))


def save_dataset(d: Dataset, path) -> None:
    try:
        with open(path, "wb") as fh:
            fh.write(_serialize(d))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def serialize_dataset(d: Dataset) -> bytes:
    return _serialize(d)


def load_dataset(path) -> Dataset:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    if len(blob) < _HEADER.size + 4:
        raise ChecksumMismatch("file too short")
    payload, crc_bytes = blob[:-4], blob[-4:]
    if struct.unpack("<I", crc_bytes)[0] != zlib.crc32(payload):
        raise ChecksumMismatch("CRC32 mismatch")
    fields = _HEADER.unpack_from(payload, 0)
    magic, version, kind_b, n = fields[0], fields[1], fields[2], fields[3]
    lohi = fields[4:12]
    master_seed, width, height = fields[12], fields[13], fields[14]
    if magic != MAGIC:
        raise FormatVersionMismatch("bad magic")
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"unsupported version {version}")
    kind = DatasetKind(kind_b)
    limits = OffsetLimits(lohi[1], lohi[3], lohi[5], lohi[7])

    img_bytes = width * height * 3
    rec = 2 * img_bytes + 6 * 8 + 2
    offset = _HEADER.size
    if len(payload) != offset + n * rec:
        raise ChecksumMismatch("record area has unexpected size")
    samples = []
    for _ in range(n):
        ref = np.frombuffer(payload, np.uint8, img_bytes, offset).reshape(height, width, 3)
        offset += img_bytes
        cur = np.frombuffer(payload, np.uint8, img_bytes, offset).reshape(height, width, 3)
        offset += img_bytes
        label = np.frombuffer(payload, "<f8", 6, offset).astype(np.float64)
        offset += 48
        origin, sampler = payload[offset], payload[offset + 1]
        offset += 2
        samples.append(
            Sample(
                ref.copy(),
                cur.copy(),
                label[:3].copy(),
                label[3:].copy(),
                DatasetKind(origin),
                SamplerTag(sampler),
            )
        )
    return Dataset(kind, samples, master_seed, limits, width, height, None)
