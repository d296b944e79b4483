"""Shared types, codecs and deterministic randomness.

Images travel as :class:`ImageBuffer` (an ``(H, W, C)`` uint8 or float
array plus a colorspace tag). Most numeric routines elsewhere accept either
an ``ImageBuffer`` or a bare ndarray; :func:`pixels` unwraps both.
"""

from __future__ import annotations

import enum
import json
import math
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from PIL import Image


class FormatError(ValueError):
    """A file or byte stream could not be decoded."""


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Row-major raster, stored as an ``(height, width, channels)`` array.

    ``data`` is either uint8 in [0, 255] or float64 in [0, 1].
    """

    data: np.ndarray
    colorspace: str = "sRGB"

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) raster, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            arr = arr.astype(np.float64)
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        if self.colorspace not in ("sRGB", "grayscale"):
            raise ValueError(f"unknown colorspace {self.colorspace!r}")
        if arr.shape[2] == 1 and self.colorspace == "sRGB":
            object.__setattr__(self, "colorspace", "grayscale")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def is_8bit(self) -> bool:
        return self.data.dtype == np.uint8

    def to_float(self) -> "ImageBuffer":
        if not self.is_8bit:
            return self
        return ImageBuffer(self.data / 255.0, self.colorspace)

    def to_uint8(self) -> "ImageBuffer":
        if self.is_8bit:
            return self
        return ImageBuffer(to_uint8(self.data * 255.0), self.colorspace)

    def __eq__(self, other):
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return (
            self.colorspace == other.colorspace
            and self.data.dtype == other.data.dtype
            and np.array_equal(self.data, other.data)
        )


def pixels(img) -> np.ndarray:
    """Return the ``(H, W, C)`` or ``(H, W)`` array behind ``img``.

    Float ``ImageBuffer`` data is rescaled to the 8-bit range; bare float
    arrays are taken to already be on that scale.
    """
    if isinstance(img, ImageBuffer):
        if img.is_8bit:
            return img.data
        return img.data * 255.0
    return np.asarray(img)


def to_uint8(arr: np.ndarray) -> np.ndarray:
    """Round half-up and clip to uint8."""
    return np.clip(np.floor(np.asarray(arr, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def luminance(img) -> np.ndarray:
    """Rec. 601 luma as float64 ``(H, W)`` on the 8-bit scale."""
    arr = np.asarray(pixels(img), dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.shape[2] == 1:
        return arr[:, :, 0]
    if arr.shape[2] == 3:
        return arr[:, :, 0] * 0.299 + arr[:, :, 1] * 0.587 + arr[:, :, 2] * 0.114
    raise ValueError(f"cannot take luminance of {arr.shape[2]}-channel image")


# ---------------------------------------------------------------------------
# PNG / tiled raster codecs
# ---------------------------------------------------------------------------

_PNG_SIG = b"\x89PNG\r\n\x1a\n"
_TRC_MAGIC = b"TRC1"
_TRC_HEADER = struct.Struct("<4sIIII")


def _png_header(raw: bytes) -> tuple[int, int]:
    if len(raw) < 33 or raw[12:16] != b"IHDR":
        raise FormatError("corrupt stream: missing IHDR")
    bit_depth, color_type = raw[24], raw[25]
    (crc,) = struct.unpack(">I", raw[29:33])
    if zlib.crc32(raw[12:29]) != crc:
        raise FormatError("corrupt stream: IHDR checksum mismatch")
    return bit_depth, color_type


def decode_png(raw: bytes) -> ImageBuffer:
    if not raw.startswith(_PNG_SIG):
        raise FormatError("corrupt stream: not a PNG")
    bit_depth, color_type = _png_header(raw)
    if bit_depth != 8:
        raise FormatError(f"unsupported bit depth {bit_depth}")
    if color_type not in (0, 2):
        raise FormatError(f"unsupported channel layout (PNG color type {color_type})")
    import io

    try:
        with Image.open(io.BytesIO(raw)) as im:
            im.load()
            arr = np.array(im)
    except Exception as exc:  # Pillow raises a zoo of types on bad streams
        raise FormatError(f"corrupt stream: {exc}") from exc
    return ImageBuffer(arr, "grayscale" if color_type == 0 else "sRGB")


def encode_png(img) -> bytes:
    import io

    arr = pixels(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def decode_trc(raw: bytes) -> ImageBuffer:
    """Decode the tiled raw container: header then row-major tiles.

    Edge tiles are stored cropped to the image extent.
    """
    if len(raw) < _TRC_HEADER.size:
        raise FormatError("corrupt stream: truncated header")
    magic, width, height, channels, tile = _TRC_HEADER.unpack_from(raw)
    if magic != _TRC_MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    if channels not in (1, 3):
        raise FormatError(f"unsupported channel count {channels}")
    if tile == 0 or width == 0 or height == 0:
        raise FormatError("corrupt stream: zero extent")
    if len(raw) - _TRC_HEADER.size != width * height * channels:
        raise FormatError("corrupt stream: payload size mismatch")
    out = np.empty((height, width, channels), dtype=np.uint8)
    pos = _TRC_HEADER.size
    for y0 in range(0, height, tile):
        for x0 in range(0, width, tile):
            h = min(tile, height - y0)
            w = min(tile, width - x0)
            n = h * w * channels
            out[y0:y0 + h, x0:x0 + w] = np.frombuffer(raw, np.uint8, n, pos).reshape(h, w, channels)
            pos += n
    return ImageBuffer(out, "grayscale" if channels == 1 else "sRGB")


def encode_trc(img, tile: int = 512) -> bytes:
    arr = pixels(img)
    if arr.dtype != np.uint8:
        arr = to_uint8(arr)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    height, width, channels = arr.shape
    parts = [_TRC_HEADER.pack(_TRC_MAGIC, width, height, channels, tile)]
    for y0 in range(0, height, tile):
        for x0 in range(0, width, tile):
            parts.append(np.ascontiguousarray(arr[y0:y0 + tile, x0:x0 + tile]).tobytes())
    return b"".join(parts)


def load_image(path) -> ImageBuffer:
    """Load a PNG (8-bit gray or RGB) or ``.trc`` tiled raster."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing file: {path}")
    raw = path.read_bytes()
    if raw.startswith(_TRC_MAGIC):
        return decode_trc(raw)
    return decode_png(raw)


def save_image(img, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".trc":
        path.write_bytes(encode_trc(img))
    else:
        path.write_bytes(encode_png(img))


# ---------------------------------------------------------------------------
# Tensor files
# ---------------------------------------------------------------------------

_TSR_MAGIC = b"TSR1"


def encode_tensor(t) -> bytes:
    arr = np.asarray(t, dtype="<f4")
    if not 1 <= arr.ndim <= 4:
        raise FormatError(f"ndim {arr.ndim} outside [1, 4]")
    head = _TSR_MAGIC + struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape)
    return head + np.ascontiguousarray(arr).tobytes()


def decode_tensor(raw: bytes) -> np.ndarray:
    if len(raw) < 8:
        raise FormatError("truncated header")
    if raw[:4] != _TSR_MAGIC:
        raise FormatError(f"bad magic {raw[:4]!r}")
    (ndim,) = struct.unpack_from("<I", raw, 4)
    if not 1 <= ndim <= 4:
        raise FormatError(f"ndim {ndim} outside [1, 4]")
    head = 8 + 4 * ndim
    if len(raw) < head:
        raise FormatError("truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", raw, 8)
    count = math.prod(dims)
    if len(raw) - head != 4 * count:
        raise FormatError(f"truncated payload: expected {4 * count} bytes, got {len(raw) - head}")
    return np.frombuffer(raw, dtype="<f4", count=count, offset=head).reshape(dims).copy()


def write_tensor(t, path) -> None:
    Path(path).write_bytes(encode_tensor(t))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------------------
# Deterministic RNG: xoshiro256** seeded through splitmix64
# ---------------------------------------------------------------------------

_MASK64 = (1 << 64) - 1


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK64


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return state, z ^ (z >> 31)


class Xoshiro256:
    """xoshiro256** generator.

    Pure-integer arithmetic, so sequences are identical on every platform.
    Use :meth:`numpy` to derive a numpy Generator for bulk array draws.
    """

    def __init__(self, seed: int = 0, *, state: Sequence[int] | None = None):
        if state is not None:
            s = [int(v) & _MASK64 for v in state]
            if len(s) != 4 or not any(s):
                raise ValueError("state must be four 64-bit words, not all zero")
        else:
            sm = int(seed) & _MASK64
            s = []
            for _ in range(4):
                sm, out = splitmix64(sm)
                s.append(out)
        self._s = s

    def next_u64(self) -> int:
        s = self._s
        result = (_rotl((s[1] * 5) & _MASK64, 7) * 9) & _MASK64
        t = (s[1] << 17) & _MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def integers(self, n: int) -> int:
        """Uniform integer in [0, n), rejection sampled."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def spawn(self) -> "Xoshiro256":
        return Xoshiro256(self.next_u64())

    def numpy(self) -> np.random.Generator:
        # PCG64 is itself platform-stable; its seed comes from this stream.
        return np.random.Generator(np.random.PCG64(self.next_u64()))


def rng_new(seed: int) -> Xoshiro256:
    return Xoshiro256(seed)


# ---------------------------------------------------------------------------
# Labels, landmarks, manifests
# ---------------------------------------------------------------------------


class Her2Level(str, enum.Enum):
    ZERO = "0"
    ONE = "1+"
    TWO = "2+"
    THREE = "3+"

    @classmethod
    def parse(cls, value) -> "Her2Level":
        if isinstance(value, Her2Level):
            return value
        try:
            return cls(str(value))
        except ValueError:
            raise ValueError(f"unknown HER2 level {value!r}; expected one of 0, 1+, 2+, 3+") from None

    def __str__(self):
        return self.value


SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class LandmarkSet:
    """Point correspondences, moving (H&E) -> fixed (IHC), in pixels."""

    moving: np.ndarray
    fixed: np.ndarray

    def __post_init__(self):
        mov = np.asarray(self.moving, dtype=np.float64).reshape(-1, 2)
        fix = np.asarray(self.fixed, dtype=np.float64).reshape(-1, 2)
        if mov.shape != fix.shape:
            raise ValueError("moving and fixed point counts differ")
        if not (np.isfinite(mov).all() and np.isfinite(fix).all()):
            raise ValueError("landmarks must be finite")
        for name, pts in (("moving", mov), ("fixed", fix)):
            if len(np.unique(pts, axis=0)) != len(pts):
                raise ValueError(f"duplicate {name} points")
        object.__setattr__(self, "moving", mov)
        object.__setattr__(self, "fixed", fix)

    def __len__(self):
        return len(self.moving)

    @classmethod
    def from_pairs(cls, pairs: Iterable) -> "LandmarkSet":
        pairs = list(pairs)
        if not pairs:
            return cls(np.zeros((0, 2)), np.zeros((0, 2)))
        return cls([p[0] for p in pairs], [p[1] for p in pairs])

    @classmethod
    def from_json(cls, obj: dict) -> "LandmarkSet":
        try:
            pairs = [(p["moving"], p["fixed"]) for p in obj["pairs"]]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad landmark JSON: {exc}") from exc
        return cls.from_pairs(pairs)

    def to_json(self) -> dict:
        return {
            "pairs": [
                {"moving": [float(m[0]), float(m[1])], "fixed": [float(f[0]), float(f[1])]}
                for m, f in zip(self.moving, self.fixed)
            ]
        }


@dataclass(frozen=True)
class ManifestEntry:
    patch_id: str
    wsi_id: str
    origin: tuple[int, int]
    size: int
    her2: Her2Level
    split: str
    tissue_pass: bool = True
    alignment_pass: bool = True

    def to_json(self) -> dict:
        return {
            "patch_id": self.patch_id,
            "wsi_id": self.wsi_id,
            "origin": [int(self.origin[0]), int(self.origin[1])],
            "size": int(self.size),
            "her2": str(self.her2),
            "split": self.split,
            "qc": {"tissue_pass": bool(self.tissue_pass), "alignment_pass": bool(self.alignment_pass)},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ManifestEntry":
        try:
            qc = obj["qc"]
            ox, oy = obj["origin"]
            tissue, aligned = qc["tissue_pass"], qc["alignment_pass"]
            entry = cls(
                patch_id=str(obj["patch_id"]),
                wsi_id=str(obj["wsi_id"]),
                origin=(int(ox), int(oy)),
                size=int(obj["size"]),
                her2=Her2Level.parse(obj["her2"]),
                split=str(obj["split"]),
                tissue_pass=tissue,
                alignment_pass=aligned,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"bad manifest entry: {exc}") from exc
        if not isinstance(tissue, bool) or not isinstance(aligned, bool):
            raise FormatError("qc flags must be booleans")
        return entry


@dataclass(frozen=True)
class PatchManifest:
    entries: tuple[ManifestEntry, ...]
    stride: int
    size: int

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        seen = set()
        for e in self.entries:
            if e.patch_id in seen:
                raise ValueError(f"duplicate patch_id {e.patch_id!r}")
            seen.add(e.patch_id)
            if e.split not in SPLITS:
                raise ValueError(f"unknown split {e.split!r}")
            if e.size != self.size:
                raise ValueError(f"patch {e.patch_id!r} has size {e.size}, expected {self.size}")
            if e.origin[0] % self.stride or e.origin[1] % self.stride:
                raise ValueError(f"patch {e.patch_id!r} origin {e.origin} not on stride {self.stride}")

    def __len__(self):
        return len(self.entries)

    def summary(self) -> dict[str, int]:
        counts = {s: 0 for s in SPLITS}
        for e in self.entries:
            counts[e.split] += 1
        return counts

    def to_json(self) -> dict:
        return {
            "entries": [e.to_json() for e in self.entries],
            "size": self.size,
            "stride": self.stride,
            "summary": self.summary(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PatchManifest":
        try:
            entries = [ManifestEntry.from_json(e) for e in obj["entries"]]
            manifest = cls(entries, stride=int(obj["stride"]), size=int(obj["size"]))
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad manifest: {exc}") from exc
        if "summary" in obj and obj["summary"] != manifest.summary():
            raise FormatError("manifest summary does not match entries")
        return manifest

    def dumps(self) -> str:
        return dumps(self.to_json())

    @classmethod
    def loads(cls, text: str) -> "PatchManifest":
        return cls.from_json(loads(text))


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _canonical(obj: Any) -> Any:
    if isinstance(obj, bool) or obj is None or isinstance(obj, str):
        return obj
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return float(f"{x:.6g}")
    if isinstance(obj, enum.Enum):
        return _canonical(obj.value)
    if isinstance(obj, dict):
        return {str(k): _canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canonical(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_canonical(v) for v in obj.tolist()]
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, 6 significant digits, non-finite as strings."""
    return json.dumps(_canonical(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def loads(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc}") from exc


def real(value) -> float:
    """Inverse of the non-finite string encoding used by :func:`dumps`."""
    if isinstance(value, str):
        if value in ("inf", "-inf", "nan"):
            return float(value)
        raise FormatError(f"not a number: {value!r}")
    return float(value)
