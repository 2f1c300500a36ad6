"""Skeletal joint-orientation sequences: loading, resampling, windowing, splitting.

A sequence is a ``T x D`` matrix of Euler angles in degrees, ``D = 3 * M``
for ``M`` tracked joints. Text files hold one frame per row, values separated
by commas and/or whitespace.
"""

from __future__ import annotations

import dataclasses
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from mqa.errors import DataError, DimensionError, ParameterError, ParseError, SplitError, WindowError

Label = Literal["correct", "incorrect", "unlabeled"]
FORMATS = ("uiprmd_angles", "kimore")
FRAME_RATES = {"vicon": 100.0, "kinect": 30.0}
KIMORE_SCORE_MAX = 50.0
DEFAULT_CANONICAL_T = 240

_UIPRMD_NAME = re.compile(r"m(?P<ex>\d+)_s(?P<subj>\d+)_e(?P<ep>\d+)", re.IGNORECASE)
_SPLIT = re.compile(r"[,\s]+")


@dataclass(frozen=True)
class SkeletalSequence:
    frames: np.ndarray
    frame_rate: float = 30.0
    device: str = "kinect"
    label: Label = "unlabeled"
    clinical_score: float | None = None
    seq_id: str = ""
    exercise: str = ""
    subject: str = ""

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64)
        if frames.ndim != 2:
            raise DimensionError(f"frames must be T x D, got shape {frames.shape}")
        if frames.shape[0] < 1:
            raise DimensionError("a sequence needs at least one frame")
        if frames.shape[1] == 0 or frames.shape[1] % 3:
            raise DimensionError(f"feature count {frames.shape[1]} is not a positive multiple of 3")
        if not np.isfinite(frames).all():
            raise DataError(f"sequence {self.seq_id!r} contains non-finite values")
        frames.flags.writeable = False
        object.__setattr__(self, "frames", frames)

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    @property
    def D(self) -> int:
        return self.frames.shape[1]

    @property
    def joint_count(self) -> int:
        return self.frames.shape[1] // 3

    M = joint_count

    def with_frames(self, frames: np.ndarray) -> "SkeletalSequence":
        return dataclasses.replace(self, frames=frames)


@dataclass(frozen=True)
class WindowedSequence:
    windows: np.ndarray  # [N, W, D]
    dropped: int = 0

    @property
    def N(self) -> int:
        return self.windows.shape[0]

    @property
    def W(self) -> int:
        return self.windows.shape[1]


@dataclass
class DatasetSplit:
    train: list[SkeletalSequence]
    validation: list[SkeletalSequence]
    seed: int = 0


@dataclass
class ManifestEntry:
    file: str
    exercise: str
    subject: str
    label: str
    T: int
    M: int
    clinical_score: float | None = None
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# text I/O
# ---------------------------------------------------------------------------

def parse_frames(text: str, source="<text>") -> np.ndarray:
    rows: list[list[float]] = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        tokens = [tok for tok in _SPLIT.split(line) if tok]
        try:
            values = [float(tok) for tok in tokens]
        except ValueError as exc:
            raise ParseError(f"non-numeric token ({exc})", source, lineno) from None
        if width is None:
            width = len(values)
            if width % 3:
                raise ParseError(f"{width} columns is not divisible by 3", source, lineno)
        elif len(values) != width:
            raise ParseError(f"expected {width} columns, found {len(values)}", source, lineno)
        if not all(math.isfinite(v) for v in values):
            raise ParseError("non-finite value", source, lineno)
        rows.append(values)
    if not rows:
        raise ParseError("file contains no frames", source)
    return np.array(rows, dtype=np.float64)


def _ids_from_name(path: Path) -> dict:
    m = _UIPRMD_NAME.search(path.stem)
    info = {"seq_id": path.stem}
    if m:
        info["exercise"] = f"E{int(m['ex'])}"
        info["subject"] = f"S{int(m['subj'])}"
    if m or "_inc" in path.stem.lower():
        info["label"] = "incorrect" if path.stem.lower().endswith("_inc") else "correct"
    return info


def load_sequence(path, format: str = "uiprmd_angles", **overrides) -> SkeletalSequence:
    """Read one repetition. Identifiers default to those encoded in UI-PRMD file names."""
    if format not in FORMATS:
        raise ParameterError(f"unknown format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read file ({exc.strerror})", path) from None
    frames = parse_frames(text, path)
    joints = frames.shape[1] // 3
    device = "vicon" if format == "uiprmd_angles" and joints == 39 else "kinect"
    info = {"device": device, "frame_rate": FRAME_RATES[device]}
    info.update(_ids_from_name(path))
    info.update({k: v for k, v in overrides.items() if v is not None})
    return SkeletalSequence(frames=frames, **info)


def format_frames(frames: np.ndarray) -> str:
    # repr() gives the shortest string that round-trips to the same double
    return "".join(",".join(repr(float(v)) for v in row) + "\n" for row in frames)


def save_sequence(seq: SkeletalSequence, path) -> Path:
    path = Path(path)
    path.write_text(format_frames(seq.frames))
    return path


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def manifest_entry(seq: SkeletalSequence, file: str) -> dict:
    entry = {
        "file": file,
        "exercise": seq.exercise,
        "subject": seq.subject,
        "label": seq.label,
        "T": seq.T,
        "M": seq.joint_count,
    }
    if seq.clinical_score is not None:
        entry["clinical_score"] = seq.clinical_score
    return entry


def write_dataset(sequences: Sequence[SkeletalSequence], directory, format: str = "uiprmd_angles") -> Path:
    """Write sequences as ``<seq_id>.txt`` plus a JSON manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for seq in sequences:
        name = f"{seq.seq_id}.txt"
        save_sequence(seq, directory / name)
        entries.append(manifest_entry(seq, name))
    manifest = {"format": format, "sequences": entries}
    path = directory / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_dataset(directory, format: str | None = None) -> list[SkeletalSequence]:
    """Load every sequence in ``directory``.

    With a manifest, its entries define ids, labels and clinical scores;
    without one, all ``*.txt`` files are read and UI-PRMD names are parsed.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"dataset directory {directory} does not exist")
    manifest_path = directory / MANIFEST_NAME
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid manifest JSON ({exc.msg})", manifest_path, exc.lineno) from None
        fmt = format or manifest.get("format", "uiprmd_angles")
        out = []
        for entry in manifest["sequences"]:
            seq = load_sequence(
                directory / entry["file"],
                fmt,
                seq_id=Path(entry["file"]).stem,
                exercise=entry.get("exercise"),
                subject=entry.get("subject"),
                label=entry.get("label"),
                clinical_score=entry.get("clinical_score"),
            )
            out.append(seq)
        return out
    files = sorted(directory.glob("*.txt"))
    if not files:
        raise DataError(f"no sequence files in {directory}")
    return [load_sequence(f, format or "uiprmd_angles") for f in files]


def normalized_clinical_score(raw: float) -> float:
    """Map a KIMORE clinical score on [0, 50] to [0, 1]."""
    return float(np.clip(raw / KIMORE_SCORE_MAX, 0.0, 1.0))


def group_by_exercise(sequences: Sequence[SkeletalSequence]) -> dict[str, list[SkeletalSequence]]:
    groups: dict[str, list[SkeletalSequence]] = {}
    for seq in sequences:
        groups.setdefault(seq.exercise, []).append(seq)
    return dict(sorted(groups.items()))


# ---------------------------------------------------------------------------
# temporal operations
# ---------------------------------------------------------------------------

def resample_frames(frames: np.ndarray, target_T: int) -> np.ndarray:
    T = frames.shape[0]
    if T == 0:
        raise DimensionError("cannot resample an empty sequence")
    if target_T < 2:
        raise ParameterError(f"target_T must be >= 2, got {target_T}")
    if target_T == T:
        return np.array(frames, dtype=np.float64)
    if T == 1:
        return np.repeat(frames, target_T, axis=0)
    pos = np.linspace(0.0, T - 1, target_T)
    lo = np.minimum(np.floor(pos).astype(int), T - 2)
    frac = (pos - lo)[:, None]
    out = frames[lo] * (1.0 - frac) + frames[lo + 1] * frac
    out[0], out[-1] = frames[0], frames[-1]
    return out


def resample_sequence(seq: SkeletalSequence, target_T: int) -> SkeletalSequence:
    """Linear interpolation onto ``target_T`` equally spaced positions over ``[0, T-1]``."""
    return seq.with_frames(resample_frames(seq.frames, target_T))


def window_slice(seq: SkeletalSequence | np.ndarray, W: int, remainder: str = "drop") -> WindowedSequence:
    """Cut into ``floor(T / W)`` contiguous windows of ``W`` frames.

    ``remainder="drop"`` discards the trailing ``T mod W`` frames;
    ``remainder="resample"`` first resamples to the nearest multiple of ``W``.
    """
    frames = seq.frames if isinstance(seq, SkeletalSequence) else np.asarray(seq, dtype=np.float64)
    T = frames.shape[0]
    if W < 1:
        raise WindowError(f"window length must be >= 1, got {W}")
    if T < W:
        raise WindowError(f"sequence of {T} frames is shorter than the window length {W}")
    if remainder == "resample" and T % W:
        n = max(1, round(T / W))
        frames = resample_frames(frames, max(2, n * W))
        T = frames.shape[0]
    elif remainder not in ("drop", "resample"):
        raise ParameterError(f"unknown remainder policy {remainder!r}")
    n = T // W
    windows = np.array(frames[: n * W]).reshape(n, W, frames.shape[1])
    return WindowedSequence(windows=windows, dropped=T - n * W)


def split_dataset(sequences: Sequence, ratio: float = 0.8, seed: int = 0) -> DatasetSplit:
    """Seeded shuffle, then the first ``floor(ratio * n)`` items go to training."""
    n = len(sequences)
    if n < 2:
        raise SplitError(f"need at least 2 sequences to split, got {n}")
    if not 0.0 < ratio < 1.0:
        raise SplitError(f"split ratio must lie in (0, 1), got {ratio}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = min(max(math.floor(ratio * n + 1e-9), 1), n - 1)
    return DatasetSplit(
        train=[sequences[i] for i in order[:n_train]],
        validation=[sequences[i] for i in order[n_train:]],
        seed=seed,
    )
