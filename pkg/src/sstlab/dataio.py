"""Dataset ingestion and preprocessing: small-NORB binary matrix files,
PGM/PPM images, box-filter downsampling, the deterministic synthetic
toy dataset, and sequence manifests.

Pixel data stays uint8 through this module; `to_unit` converts to
float [0,1] at the network boundary.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .rng import XorShift128Plus, derive_seed
from .varspace import (
    AZIMUTH_STEPS,
    Batch,
    FrameSequence,
    VariationPoint,
    class_of_object,
)


class BadMagic(Exception):
    pass


class TruncatedFile(Exception):
    pass


class DimensionMismatch(Exception):
    pass


class NonDivisible(Exception):
    pass


class ParseError(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


# ---------------------------------------------------------------------------
# small-NORB binary matrix files

_MAGIC_BYTE = 0x1E3D4C55
_MAGIC_INT = 0x1E3D4C54


@dataclass
class NorbRecord:
    image: np.ndarray  # 96x96 uint8, left eye
    category: int      # 0-4
    instance: int      # 0-9
    elevation: int     # 0-8
    azimuth: int       # 0-17 (raw file values 0,2,...,34 halved)
    lighting: int      # 0-5

    @property
    def object_id(self) -> int:
        return self.category * 10 + self.instance

    @property
    def point(self) -> VariationPoint:
        return VariationPoint(self.elevation, self.azimuth, self.lighting)


def _read_matrix(path) -> np.ndarray:
    """NORB matrix file: i32 magic, i32 ndim, max(3, ndim) i32 sizes,
    then the raw row-major payload."""
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise TruncatedFile(f"{path}: header")
        magic, ndim = struct.unpack("<ii", head)
        if magic == _MAGIC_BYTE:
            dtype = np.uint8
        elif magic == _MAGIC_INT:
            dtype = np.dtype("<i4")
        else:
            raise BadMagic(f"{path}: magic 0x{magic & 0xFFFFFFFF:08X}")
        if not (1 <= ndim <= 8):
            raise DimensionMismatch(f"{path}: ndim {ndim}")
        n_sizes = max(3, ndim)
        raw = fh.read(4 * n_sizes)
        if len(raw) < 4 * n_sizes:
            raise TruncatedFile(f"{path}: dimension sizes")
        sizes = struct.unpack(f"<{n_sizes}i", raw)[:ndim]
        if any(s <= 0 for s in sizes):
            raise DimensionMismatch(f"{path}: sizes {sizes}")
        count = int(np.prod(sizes))
        payload = fh.read(count * np.dtype(dtype).itemsize)
        if len(payload) < count * np.dtype(dtype).itemsize:
            raise TruncatedFile(f"{path}: payload")
        return np.frombuffer(payload, dtype=dtype).reshape(sizes)


def _write_matrix(path, arr: np.ndarray) -> None:
    """Inverse of _read_matrix, used as the round-trip oracle."""
    if arr.dtype == np.uint8:
        magic = _MAGIC_BYTE
    elif arr.dtype == np.int32 or arr.dtype == np.dtype("<i4"):
        magic = _MAGIC_INT
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    sizes = list(arr.shape) + [1] * max(0, 3 - arr.ndim)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<ii", magic, arr.ndim))
        fh.write(struct.pack(f"<{len(sizes)}i", *sizes))
        fh.write(np.ascontiguousarray(arr).tobytes())


def load_norb(data_file, category_file, info_file) -> list[NorbRecord]:
    """Load small-NORB records, keeping only the left image of each
    stereo pair. Raw azimuth values (0, 2, ..., 34) become step indices."""
    data = _read_matrix(data_file)
    cats = _read_matrix(category_file)
    info = _read_matrix(info_file)
    if data.ndim != 4 or data.shape[1] != 2:
        raise DimensionMismatch(f"data shape {data.shape}, expected (N,2,H,W)")
    n = data.shape[0]
    if cats.shape[0] != n or info.shape[0] != n:
        raise DimensionMismatch(
            f"count mismatch: data {n}, cat {cats.shape[0]}, info {info.shape[0]}")
    if info.ndim != 2 or info.shape[1] != 4:
        raise DimensionMismatch(f"info shape {info.shape}, expected (N,4)")
    records = []
    for i in range(n):
        instance, elevation, azimuth, lighting = (int(v) for v in info[i])
        if azimuth % 2 or not (0 <= azimuth // 2 < AZIMUTH_STEPS):
            raise DimensionMismatch(f"record {i}: raw azimuth {azimuth}")
        records.append(NorbRecord(
            image=np.array(data[i, 0], dtype=np.uint8),
            category=int(cats[i]),
            instance=instance,
            elevation=elevation,
            azimuth=azimuth // 2,
            lighting=lighting,
        ))
    return records


def write_norb(data_file, category_file, info_file,
               records: list[NorbRecord]) -> None:
    """Writer counterpart of load_norb (right eye duplicated from left)."""
    data = np.stack([np.stack([r.image, r.image]) for r in records]).astype(np.uint8)
    cats = np.array([r.category for r in records], dtype="<i4")
    info = np.array(
        [[r.instance, r.elevation, r.azimuth * 2, r.lighting] for r in records],
        dtype="<i4")
    _write_matrix(data_file, data)
    _write_matrix(category_file, cats)
    _write_matrix(info_file, info)


# ---------------------------------------------------------------------------
# PGM / PPM

def _read_pnm_header(fh, path):
    def tokens():
        while True:
            line = fh.readline()
            if not line:
                raise TruncatedFile(f"{path}: header")
            line = line.split(b"#", 1)[0]
            yield from line.split()

    tok = tokens()
    magic = next(tok)
    fields = [int(next(tok)) for _ in range(3)]
    return magic, fields


def read_pgm(path) -> np.ndarray:
    """Binary PGM (P5), maxval <= 255."""
    with open(path, "rb") as fh:
        magic, (w, h, maxval) = _read_pnm_header(fh, path)
        if magic != b"P5":
            raise BadMagic(f"{path}: {magic!r} is not P5")
        if not (0 < maxval <= 255):
            raise DimensionMismatch(f"{path}: maxval {maxval}")
        raw = fh.read(w * h)
        if len(raw) < w * h:
            raise TruncatedFile(f"{path}: pixel data")
        return np.frombuffer(raw, dtype=np.uint8).reshape(h, w)


def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6), maxval <= 255; returns (H, W, 3)."""
    with open(path, "rb") as fh:
        magic, (w, h, maxval) = _read_pnm_header(fh, path)
        if magic != b"P6":
            raise BadMagic(f"{path}: {magic!r} is not P6")
        if not (0 < maxval <= 255):
            raise DimensionMismatch(f"{path}: maxval {maxval}")
        raw = fh.read(w * h * 3)
        if len(raw) < w * h * 3:
            raise TruncatedFile(f"{path}: pixel data")
        return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)


def write_pgm(path, image: np.ndarray) -> None:
    image = np.asarray(image, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (image.shape[1], image.shape[0]))
        fh.write(image.tobytes())


# ---------------------------------------------------------------------------
# preprocessing

def downsample_box(image: np.ndarray, factor: int) -> np.ndarray:
    """Block mean over factor x factor cells; byte images round half-up."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    if h % factor or w % factor:
        raise NonDivisible(f"{h}x{w} not divisible by {factor}")
    blocks = image.reshape(h // factor, factor, w // factor, factor)
    means = blocks.astype(np.float64).mean(axis=(1, 3))
    if np.issubdtype(image.dtype, np.integer):
        return np.floor(means + 0.5).astype(image.dtype)
    return means.astype(image.dtype)


def rgb_to_gray(image: np.ndarray) -> np.ndarray:
    """Luma conversion 0.299/0.587/0.114, rounded half-up."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise DimensionMismatch(f"expected (H,W,3), got {image.shape}")
    luma = (0.299 * image[..., 0].astype(np.float64)
            + 0.587 * image[..., 1]
            + 0.114 * image[..., 2])
    return np.floor(luma + 0.5).astype(np.uint8)


def to_unit(image: np.ndarray) -> np.ndarray:
    """uint8 -> float64 in [0, 1]."""
    return np.asarray(image, dtype=np.float64) / 255.0


def augment_jitter(image: np.ndarray, rng: np.random.Generator,
                   max_shift: int = 2, max_rotate_deg: float = 8.0,
                   max_scale: float = 0.1) -> np.ndarray:
    """Small random translate/rotate/scale, used only by the optional
    supervised baseline. Parameters are this implementation's choice."""
    from scipy import ndimage

    img = np.asarray(image, dtype=np.float64)
    angle = rng.uniform(-max_rotate_deg, max_rotate_deg)
    zoom = 1.0 + rng.uniform(-max_scale, max_scale)
    out = ndimage.rotate(img, angle, reshape=False, order=1, mode="nearest")
    out = ndimage.zoom(out, zoom, order=1)
    # crop or pad back to the original size, centered
    h, w = img.shape
    oh, ow = out.shape
    if oh >= h:
        top = (oh - h) // 2
        out = out[top:top + h, :]
    else:
        pad = h - oh
        out = np.pad(out, ((pad // 2, pad - pad // 2), (0, 0)), mode="edge")
    if out.shape[1] >= w:
        left = (out.shape[1] - w) // 2
        out = out[:, left:left + w]
    else:
        pad = w - out.shape[1]
        out = np.pad(out, ((0, 0), (pad // 2, pad - pad // 2)), mode="edge")
    sy = rng.integers(-max_shift, max_shift + 1)
    sx = rng.integers(-max_shift, max_shift + 1)
    out = ndimage.shift(out, (sy, sx), order=1, mode="nearest")
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# synthetic toy dataset

@dataclass
class ToyDatasetSpec:
    n_classes: int = 5
    objects_per_class: int = 10
    render_size: int = 32
    seed: int = 0
    noise_amplitude: float = 0.04


_SHAPE_FAMILIES = ("ellipse", "rectangle", "cross", "annulus", "triangle")


def _object_params(spec: ToyDatasetSpec, object_id: int) -> dict:
    rng = XorShift128Plus(derive_seed(spec.seed, 0x0B9E, object_id))
    return {
        "size": 5.5 + 3.5 * rng.uniform(),
        "aspect": 0.45 + 0.4 * rng.uniform(),
        "phase": rng.uniform() * 2 * np.pi,
        "thickness": 0.25 + 0.2 * rng.uniform(),
    }


def render_toy(spec: ToyDatasetSpec, object_id: int,
               point: VariationPoint) -> np.ndarray:
    """Deterministic 32x32 uint8 rendering. Elevation shifts the shape
    vertically, azimuth rotates it (one full turn over 18 steps) and
    lighting scales the brightness."""
    n_objects = spec.n_classes * spec.objects_per_class
    if not (0 <= object_id < n_objects):
        raise ValueError(f"object_id {object_id} out of range")
    family = _SHAPE_FAMILIES[(object_id // spec.objects_per_class)
                             % len(_SHAPE_FAMILIES)]
    par = _object_params(spec, object_id)
    s = spec.render_size
    cy = s / 2.0 + (point.elevation - 4) * 1.1
    cx = s / 2.0
    theta = point.azimuth * (2 * np.pi / AZIMUTH_STEPS) + par["phase"]
    brightness = 0.45 + 0.11 * point.lighting

    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    ct, st = np.cos(theta), np.sin(theta)
    xr = (xx - cx) * ct + (yy - cy) * st
    yr = -(xx - cx) * st + (yy - cy) * ct
    a = par["size"]
    b = par["size"] * par["aspect"]

    # signed "inside" field, positive inside the shape, ~1px soft edge
    if family == "ellipse":
        field = 1.0 - np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
        edge = 0.18
    elif family == "rectangle":
        field = 1.0 - np.maximum(np.abs(xr) / a, np.abs(yr) / b)
        edge = 0.18
    elif family == "cross":
        bar = par["thickness"] * a
        field = np.maximum(
            1.0 - np.maximum(np.abs(xr) / a, np.abs(yr) / bar),
            1.0 - np.maximum(np.abs(yr) / a, np.abs(xr) / bar))
        edge = 0.18
    elif family == "annulus":
        r = np.sqrt((xr / a) ** 2 + (yr / b) ** 2)
        width = par["thickness"]
        field = 1.0 - np.abs(r - (1.0 - width)) / width
        edge = 0.25
    else:  # triangle
        h1 = yr / b + 0.5
        h2 = (-0.5 * yr / b + 0.866 * xr / a) + 0.5
        h3 = (-0.5 * yr / b - 0.866 * xr / a) + 0.5
        field = np.minimum(np.minimum(h1, h2), h3)
        edge = 0.12
    mask = np.clip(field / edge, 0.0, 1.0)

    img = 0.08 + brightness * mask
    if spec.noise_amplitude > 0:
        nrng = XorShift128Plus(derive_seed(
            spec.seed, 0x0F, object_id,
            point.elevation, point.azimuth, point.lighting))
        noise = np.array([nrng.uniform() for _ in range(s * s)]).reshape(s, s)
        img = img + spec.noise_amplitude * (noise - 0.5)
    return np.clip(np.floor(img * 255.0 + 0.5), 0, 255).astype(np.uint8)


class ToyFrameSource:
    """Memoized (object, point) -> float image in [0,1] renderer."""

    def __init__(self, spec: ToyDatasetSpec | None = None):
        self.spec = spec or ToyDatasetSpec()
        self._cache: dict[tuple, np.ndarray] = {}

    def __call__(self, object_id: int, point: VariationPoint) -> np.ndarray:
        key = (object_id, point.as_tuple())
        hit = self._cache.get(key)
        if hit is None:
            hit = to_unit(render_toy(self.spec, object_id, point))
            self._cache[key] = hit
        return hit


class NorbFrameSource:
    """Frame source over loaded NORB records, downsampled to 32x32."""

    def __init__(self, records: list[NorbRecord], factor: int = 3):
        self._frames: dict[tuple, np.ndarray] = {}
        for r in records:
            self._frames[(r.object_id, r.point.as_tuple())] = to_unit(
                downsample_box(r.image, factor))

    def __call__(self, object_id: int, point: VariationPoint) -> np.ndarray:
        key = (object_id, point.as_tuple())
        if key not in self._frames:
            raise KeyError(f"no NORB frame for object {object_id} at {point}")
        return self._frames[key]


# ---------------------------------------------------------------------------
# sequence manifests: one frame id per line, blank line between sequences

def frame_id(object_id: int, point: VariationPoint) -> str:
    return (f"object{object_id}_e{point.elevation}"
            f"_a{point.azimuth}_l{point.lighting}")


_ID_PREFIX = "object"


def parse_frame_id(text: str, line: int) -> tuple[int, VariationPoint]:
    if not text.startswith(_ID_PREFIX):
        raise ParseError(f"bad frame id {text!r}", line)
    try:
        body = text[len(_ID_PREFIX):]
        obj_part, e_part, a_part, l_part = body.split("_")
        if (e_part[0], a_part[0], l_part[0]) != ("e", "a", "l"):
            raise ValueError("bad field tags")
        return int(obj_part), VariationPoint(
            int(e_part[1:]), int(a_part[1:]), int(l_part[1:]))
    except (ValueError, IndexError) as exc:
        raise ParseError(f"bad frame id {text!r}: {exc}", line) from exc


def write_manifest(path, sequences: list[FrameSequence]) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for i, seq in enumerate(sequences):
            if i:
                fh.write("\n")
            for p in seq.points:
                fh.write(frame_id(seq.object_id, p) + "\n")


def read_manifest(path, class_mode: str = "five") -> list[FrameSequence]:
    sequences: list[FrameSequence] = []
    current: FrameSequence | None = None
    with open(path, "r", encoding="ascii") as fh:
        for lineno, raw in enumerate(fh, start=1):
            text = raw.strip()
            if not text:
                current = None
                continue
            obj, point = parse_frame_id(text, lineno)
            if current is None or current.object_id != obj:
                current = FrameSequence(
                    object_id=obj,
                    class_id=class_of_object(obj, class_mode),
                    points=[])
                sequences.append(current)
            current.points.append(point)
    return sequences


def write_batch_manifests(directory, batches: list[Batch]) -> list[str]:
    """One manifest per batch: <kind>_<index>.seq in the given directory."""
    import os
    paths = []
    for batch in batches:
        name = f"{batch.kind}_{batch.index:02d}.seq"
        path = os.path.join(directory, name)
        write_manifest(path, batch.sequences)
        paths.append(path)
    return paths


def read_batch_manifests(directory, kind: str,
                         class_mode: str = "five") -> list[Batch]:
    import glob
    import os
    batches = []
    for path in sorted(glob.glob(os.path.join(directory, f"{kind}_*.seq"))):
        stem = os.path.splitext(os.path.basename(path))[0]
        index = int(stem.split("_")[1])
        batches.append(Batch(
            sequences=read_manifest(path, class_mode),
            kind=kind, index=index))
    return batches
