"""Silhouette frames, sequences, PGM files and JSON manifests."""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

FRAME_HEIGHT = 150
FRAME_WIDTH = 200
FRAME_SHAPE = (FRAME_HEIGHT, FRAME_WIDTH)
MANIFEST_VERSION = 1


class ManifestError(ValueError):
    pass


class FrameStatus(str, Enum):
    OBSERVED = "observed"
    OCCLUDED = "occluded"
    RECONSTRUCTED = "reconstructed"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SilhouetteFrame:
    """One binary frame (foreground = 1).

    Pixels of an occluded frame are a placeholder and carry no gait
    evidence.
    """

    pixels: np.ndarray
    status: FrameStatus = FrameStatus.OBSERVED

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.size == 0:
            raise ValueError(f"frame must be a non-empty 2-D grid, got shape {px.shape}")
        if px.dtype != np.uint8 or not px.flags.c_contiguous:
            if not np.isin(px, (0, 1)).all():
                raise ValueError("frame pixels must be 0 or 1")
            px = np.ascontiguousarray(px, dtype=np.uint8)
        elif px.max(initial=0) > 1:
            raise ValueError("frame pixels must be 0 or 1")
        if px is self.pixels:
            px = px.copy()
        object.__setattr__(self, "pixels", _frozen(px))
        object.__setattr__(self, "status", FrameStatus(self.status))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def foreground(self) -> int:
        return int(self.pixels.sum())

    @classmethod
    def blank(cls, status: FrameStatus = FrameStatus.OCCLUDED) -> "SilhouetteFrame":
        return cls(np.zeros(FRAME_SHAPE, np.uint8), status)

    def with_status(self, status: FrameStatus) -> "SilhouetteFrame":
        return replace(self, status=FrameStatus(status))

    def __eq__(self, other):
        if not isinstance(other, SilhouetteFrame):
            return NotImplemented
        return self.status == other.status and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class GaitSequence:
    """Ordered frames of one walk. Cycle boundaries are half-open ``[start, end)``."""

    frames: tuple[SilhouetteFrame, ...]
    subject_id: str
    sequence_id: str
    cycle_boundaries: tuple[tuple[int, int], ...] | None = None
    fps: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if self.cycle_boundaries is not None:
            bounds = tuple((int(s), int(e)) for s, e in self.cycle_boundaries)
            prev_end = 0
            for s, e in sorted(bounds):
                if not 0 <= s < e <= len(self.frames):
                    raise ValueError(f"cycle ({s}, {e}) out of range for {len(self.frames)} frames")
                if s < prev_end:
                    raise ValueError("cycle boundaries overlap")
                prev_end = e
            object.__setattr__(self, "cycle_boundaries", bounds)

    def __len__(self):
        return len(self.frames)

    @property
    def occluded_indices(self) -> list[int]:
        return [i for i, f in enumerate(self.frames) if f.status is FrameStatus.OCCLUDED]

    @property
    def statuses(self) -> list[FrameStatus]:
        return [f.status for f in self.frames]

    def pixel_stack(self) -> np.ndarray:
        if not self.frames:
            return np.zeros((0, *FRAME_SHAPE), np.uint8)
        return np.stack([f.pixels for f in self.frames])

    def with_frames(self, frames) -> "GaitSequence":
        return replace(self, frames=tuple(frames))

    def subsequence(self, start: int, stop: int, sequence_id: str | None = None) -> "GaitSequence":
        """Frames ``[start, stop)``, keeping only the cycles that lie wholly inside."""
        bounds = None
        if self.cycle_boundaries is not None:
            bounds = tuple((s - start, e - start) for s, e in self.cycle_boundaries if s >= start and e <= stop)
        return GaitSequence(self.frames[start:stop], self.subject_id, sequence_id or self.sequence_id, bounds, self.fps)


# ---------------------------------------------------------------- PGM files

def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ManifestError("truncated PGM header")
        tokens.append(data[start:pos])
    return tokens, pos + 1  # single whitespace byte ends the header


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) or ASCII (P2) greymap as a uint8 array."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing frame file: {path}")
    data = path.read_bytes()
    magic = data[:2]
    if magic not in (b"P5", b"P2"):
        raise ManifestError(f"{path}: not a single-channel PGM (magic {magic!r})")
    (width, height, maxval), pos = _pgm_tokens(data[2:], 3)
    width, height, maxval = int(width), int(height), int(maxval)
    if width < 1 or height < 1:
        raise ManifestError(f"{path}: empty image {width}x{height}")
    if not 0 < maxval < 256:
        raise ManifestError(f"{path}: only 8-bit PGM supported (maxval {maxval})")
    body = data[2 + pos:]
    if magic == b"P5":
        if len(body) < width * height:
            raise ManifestError(f"{path}: pixel data shorter than {width}x{height}")
        arr = np.frombuffer(body, np.uint8, count=width * height)
    else:
        arr = np.array(body.split(), dtype=np.int64)
        if arr.size != width * height:
            raise ManifestError(f"{path}: expected {width * height} samples, got {arr.size}")
    arr = arr.reshape(height, width).astype(np.int64)
    if maxval != 255:
        arr = arr * 255 // maxval
    return arr.astype(np.uint8)


def write_pgm(path, pixels: np.ndarray) -> None:
    """Write a {0,1} grid as P5 with 0 -> 0 and 1 -> 255."""
    px = np.asarray(pixels, dtype=np.uint8) * np.uint8(255)
    h, w = px.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + px.tobytes())


def binarize(gray: np.ndarray) -> np.ndarray:
    return (np.asarray(gray) > 127).astype(np.uint8)


# ---------------------------------------------------------------- manifests

@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    sequence_id: str
    frame_paths: tuple[str, ...]
    occluded_indices: tuple[int, ...] = ()
    cycle_boundaries: tuple[tuple[int, int], ...] | None = None
    reconstructed_indices: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        d = {
            "subject_id": self.subject_id,
            "sequence_id": self.sequence_id,
            "frame_paths": list(self.frame_paths),
            "occluded_indices": list(self.occluded_indices),
            "cycle_boundaries": None if self.cycle_boundaries is None else [list(b) for b in self.cycle_boundaries],
        }
        if self.reconstructed_indices:
            d["reconstructed_indices"] = list(self.reconstructed_indices)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ManifestEntry":
        try:
            cb = d.get("cycle_boundaries")
            return cls(
                subject_id=str(d["subject_id"]),
                sequence_id=str(d["sequence_id"]),
                frame_paths=tuple(d["frame_paths"]),
                occluded_indices=tuple(int(i) for i in d.get("occluded_indices", ())),
                cycle_boundaries=None if cb is None else tuple((int(s), int(e)) for s, e in cb),
                reconstructed_indices=tuple(int(i) for i in d.get("reconstructed_indices", ())),
            )
        except KeyError as exc:
            raise ManifestError(f"manifest entry missing field {exc}") from None


@dataclass(frozen=True)
class SequenceManifest:
    entries: tuple[ManifestEntry, ...] = ()
    version: int = MANIFEST_VERSION
    root: Path = field(default=Path("."), compare=False)

    def to_dict(self) -> dict:
        return {"version": self.version, "entries": [e.to_dict() for e in self.entries]}

    def write(self, path=None) -> Path:
        path = Path(path) if path is not None else self.root / "manifest.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def read(cls, path) -> "SequenceManifest":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"missing manifest: {path}")
        d = json.loads(path.read_text())
        if d.get("version") != MANIFEST_VERSION:
            raise ManifestError(f"{path}: unsupported manifest version {d.get('version')!r}")
        return cls(tuple(ManifestEntry.from_dict(e) for e in d["entries"]), d["version"], path.parent)


def load_sequence(entry: ManifestEntry, root=".") -> GaitSequence:
    """Decode one manifest entry; pixels > 127 become foreground."""
    root = Path(root)
    n = len(entry.frame_paths)
    if len(set(entry.frame_paths)) != n:
        raise ManifestError(f"{entry.sequence_id}: duplicate frame path")
    for name, idx in (("occluded", entry.occluded_indices), ("reconstructed", entry.reconstructed_indices)):
        if len(set(idx)) != len(idx):
            raise ManifestError(f"{entry.sequence_id}: duplicate {name} frame index")
        bad = [i for i in idx if not 0 <= i < n]
        if bad:
            raise ManifestError(f"{entry.sequence_id}: {name} indices {bad} out of range")
    if set(entry.occluded_indices) & set(entry.reconstructed_indices):
        raise ManifestError(f"{entry.sequence_id}: frame both occluded and reconstructed")
    occluded = set(entry.occluded_indices)
    recon = set(entry.reconstructed_indices)
    frames = []
    for i, rel in enumerate(entry.frame_paths):
        px = binarize(read_pgm(root / rel))
        status = FrameStatus.OCCLUDED if i in occluded else FrameStatus.RECONSTRUCTED if i in recon else FrameStatus.OBSERVED
        frames.append(SilhouetteFrame(px, status))
    return GaitSequence(tuple(frames), entry.subject_id, entry.sequence_id, entry.cycle_boundaries)


def load_manifest(path) -> list[GaitSequence]:
    manifest = SequenceManifest.read(path)
    return [load_sequence(e, manifest.root) for e in manifest.entries]


def _entry_for(seq: GaitSequence, directory: Path, root: Path) -> ManifestEntry:
    sub = directory / f"{seq.subject_id}__{seq.sequence_id}"
    sub.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, frame in enumerate(seq.frames):
        p = sub / f"frame_{i:04d}.pgm"
        write_pgm(p, frame.pixels)
        paths.append(p.relative_to(root).as_posix())
    return ManifestEntry(
        subject_id=seq.subject_id,
        sequence_id=seq.sequence_id,
        frame_paths=tuple(paths),
        occluded_indices=tuple(i for i, f in enumerate(seq.frames) if f.status is FrameStatus.OCCLUDED),
        cycle_boundaries=seq.cycle_boundaries,
        reconstructed_indices=tuple(i for i, f in enumerate(seq.frames) if f.status is FrameStatus.RECONSTRUCTED),
    )


def save_corpus(sequences, directory) -> SequenceManifest:
    """Write every sequence as PGM frames plus one ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = tuple(_entry_for(s, directory, directory) for s in sequences)
    manifest = SequenceManifest(entries, MANIFEST_VERSION, directory)
    manifest.write()
    return manifest


def save_sequence(seq: GaitSequence, directory) -> SequenceManifest:
    """Save one sequence; an empty sequence yields a manifest with no entries."""
    return save_corpus([seq] if len(seq) else [], directory)


# ---------------------------------------------------------------- normalization

def _resize_nearest(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = a.shape
    rows = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1).astype(np.intp)
    cols = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1).astype(np.intp)
    return a[rows[:, None], cols[None, :]]


def normalize_frame(raw, status: FrameStatus = FrameStatus.OBSERVED) -> SilhouetteFrame:
    """Crop to the foreground box, scale to fit 150x200, centre the centroid column.

    Nonzero input pixels count as foreground. An all-zero grid maps to an
    all-zero 150x200 frame.
    """
    a = np.asarray(raw) != 0
    out = np.zeros(FRAME_SHAPE, np.uint8)
    if not a.any():
        return SilhouetteFrame(out, status)
    rows = np.flatnonzero(a.any(axis=1))
    cols = np.flatnonzero(a.any(axis=0))
    crop = a[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]
    h, w = crop.shape
    scale = min(FRAME_HEIGHT / h, FRAME_WIDTH / w)
    nh = min(FRAME_HEIGHT, max(1, round(h * scale)))
    nw = min(FRAME_WIDTH, max(1, round(w * scale)))
    scaled = _resize_nearest(crop, nh, nw) if (nh, nw) != (h, w) else crop
    top = (FRAME_HEIGHT - nh) // 2
    col_mass = scaled.sum(axis=0)
    cx = float((np.arange(nw) * col_mass).sum() / col_mass.sum())
    # centroid to the middle column, but never push foreground off the canvas
    left = min(max(int(round(FRAME_WIDTH // 2 - cx)), 0), FRAME_WIDTH - nw)
    out[top:top + nh, left:left + nw] = scaled
    return SilhouetteFrame(out, status)
