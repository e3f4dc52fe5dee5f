"""Utterance datasets: schema, synthetic generator and line-delimited file format.

File layout (UTF-8, one JSON object per line)::

    {"format_version": 1, "d_acoustic": 32, "d_linguistic": 96, "num_classes": 8, "split": "train", "count": 1000}
    {"id": "train-00000", "label": 3, "frames": 12, "acoustic": [...], "teacher": [...]}

``acoustic`` is the row-major T x d_acoustic matrix; floats are written with
17 significant digits so a load/save cycle is bit-exact.

Random numbers
--------------
Every random quantity comes from its own PCG64 stream created with
``numpy.random.SeedSequence(seed, spawn_key=key)``.  Keys are

* ``(0, 0)`` class centroids, ``(0, 1)`` hidden projection, ``(0, 2)`` keywords
* ``(1, i)`` training utterance ``i``, ``(2, i)`` test utterance ``i``

so utterance ``i`` never depends on how many utterances came before it.
Uniforms are ``Generator.random`` doubles and normals are produced by the
Box-Muller transform on pairs of those uniforms (see :func:`normals`).
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

FORMAT_VERSION = 1
SPLITS = ("train", "test")
_SPLIT_KEY = {"train": 1, "test": 2}


@dataclass(frozen=True, eq=False)
class Utterance:
    id: str
    acoustic: np.ndarray  # T x d_acoustic
    teacher: np.ndarray  # 1 x d_linguistic, pooled teacher embedding
    label: int

    @property
    def frames(self) -> int:
        return self.acoustic.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Utterance):
            return NotImplemented
        return (
            self.id == other.id
            and self.label == other.label
            and self.acoustic.shape == other.acoustic.shape
            and self.teacher.shape == other.teacher.shape
            and np.array_equal(self.acoustic, other.acoustic)
            and np.array_equal(self.teacher, other.teacher)
        )


@dataclass(eq=True)
class Dataset:
    d_acoustic: int
    d_linguistic: int
    num_classes: int
    split: str
    utterances: list[Utterance] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)

    def validate(self) -> "Dataset":
        """Check every invariant; raise :class:`ValidationError` on the first violation."""
        for name in ("d_acoustic", "d_linguistic", "num_classes"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.split not in SPLITS:
            raise ValidationError(f"split must be one of {SPLITS}, got {self.split!r}")
        seen = set()
        for u in self.utterances:
            if u.id in seen:
                raise ValidationError(f"duplicate utterance id {u.id!r}")
            seen.add(u.id)
            validate_utterance(u, self.d_acoustic, self.d_linguistic, self.num_classes)
        return self


def validate_utterance(u: Utterance, d_acoustic: int, d_linguistic: int, num_classes: int) -> None:
    a, t = u.acoustic, u.teacher
    if a.ndim != 2 or a.shape[0] < 1:
        raise ValidationError(f"utterance {u.id!r}: acoustic sequence needs at least one frame")
    if a.shape[1] != d_acoustic:
        raise ValidationError(f"utterance {u.id!r}: acoustic width {a.shape[1]} != d_acoustic {d_acoustic}")
    if t.size != d_linguistic:
        raise ValidationError(f"utterance {u.id!r}: teacher length {t.size} != d_linguistic {d_linguistic}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(t))):
        raise ValidationError(f"utterance {u.id!r}: non-finite values")
    if not (0 <= u.label < num_classes):
        raise ValidationError(f"utterance {u.id!r}: label {u.label} outside [0, {num_classes})")


# --- generator ---------------------------------------------------------------


@dataclass
class GeneratorConfig:
    seed: int = 42
    num_classes: int = 8
    train_count: int = 1000
    test_count: int = 250
    d_acoustic: int = 32
    d_linguistic: int = 96
    min_len: int = 5
    max_len: int = 20
    teacher_noise: float = 0.3
    acoustic_noise: float = 0.5
    keyword_prob: float = 0.6
    centroid_scale: float = 1.0

    @classmethod
    def large_profile(cls, **overrides) -> "GeneratorConfig":
        """Dimensions of the original system (256-d acoustic, 768-d linguistic)."""
        return cls(**{"d_acoustic": 256, "d_linguistic": 768, **overrides})

    def validate(self) -> "GeneratorConfig":
        bad = []
        if self.num_classes < 1:
            bad.append("num_classes")
        if self.d_acoustic < 1:
            bad.append("d_acoustic")
        if self.d_linguistic < 1:
            bad.append("d_linguistic")
        if self.min_len < 1:
            bad.append("min_len")
        if self.max_len < self.min_len:
            bad.append("max_len")
        if self.train_count < self.num_classes:
            bad.append("train_count")
        if self.test_count < self.num_classes:
            bad.append("test_count")
        if not self.teacher_noise >= 0:
            bad.append("teacher_noise")
        if not self.acoustic_noise >= 0:
            bad.append("acoustic_noise")
        if not 0 <= self.keyword_prob <= 1:
            bad.append("keyword_prob")
        if not self.centroid_scale > 0:
            bad.append("centroid_scale")
        if bad:
            raise ValidationError(f"invalid generator config: {', '.join(bad)}")
        return self

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def normals(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normals by Box-Muller: ``sqrt(-2 ln u1) * cos(2 pi u2)``, one pair per value."""
    n = int(np.prod(shape))
    u = rng.random((n, 2))
    u1 = 1.0 - u[:, 0]  # (0, 1], keeps log finite
    return (np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u[:, 1])).reshape(shape)


def _shared_draws(cfg: GeneratorConfig):
    centroids = cfg.centroid_scale * normals(stream(cfg.seed, 0, 0), (cfg.num_classes, cfg.d_linguistic))
    projection = normals(stream(cfg.seed, 0, 1), (cfg.d_acoustic, cfg.d_linguistic))
    keywords = normals(stream(cfg.seed, 0, 2), (cfg.num_classes, cfg.d_acoustic))
    return centroids, projection, keywords


def _make_utterance(cfg, split, index, centroids, projection, keywords) -> Utterance:
    rng = stream(cfg.seed, _SPLIT_KEY[split], index)
    # labels cycle through the classes so every split is balanced
    label = index % cfg.num_classes
    c = centroids[label]
    teacher = c + cfg.teacher_noise * normals(rng, (cfg.d_linguistic,))
    n_frames = int(rng.integers(cfg.min_len, cfg.max_len + 1))
    latent = c + cfg.teacher_noise * normals(rng, (n_frames, cfg.d_linguistic))
    acoustic = latent @ projection.T / math.sqrt(cfg.d_linguistic)
    acoustic += cfg.acoustic_noise * normals(rng, (n_frames, cfg.d_acoustic))
    # always draw both numbers so the stream layout does not depend on keyword_prob
    u_kw = rng.random()
    kw_frame = int(rng.integers(0, n_frames))
    if u_kw < cfg.keyword_prob:
        acoustic[kw_frame] = keywords[label]
    return Utterance(f"{split}-{index:05d}", acoustic, teacher.reshape(1, -1), label)


def generate(cfg: GeneratorConfig) -> tuple[Dataset, Dataset]:
    """Build disjoint train/test splits that share centroids, projection and keywords.

    Each acoustic frame is the class centroid (plus teacher-scale latent noise)
    pushed through a hidden random projection, scaled by ``1/sqrt(d_linguistic)``
    so projected frames have unit per-coordinate variance, plus acoustic noise.
    With probability ``keyword_prob`` one frame is replaced by a class keyword
    vector that exists only in acoustic space.
    """
    cfg.validate()
    shared = _shared_draws(cfg)
    out = []
    for split, count in (("train", cfg.train_count), ("test", cfg.test_count)):
        utts = [_make_utterance(cfg, split, i, *shared) for i in range(count)]
        out.append(Dataset(cfg.d_acoustic, cfg.d_linguistic, cfg.num_classes, split, utts))
    return out[0], out[1]


# --- file format -------------------------------------------------------------


def format_float(v: float) -> str:
    """17 significant digits, always spelled as a float literal (``-0`` would parse as integer 0)."""
    text = format(float(v), ".17g")
    if "." not in text and "e" not in text:
        text += ".0"
    return text


def format_floats(values: np.ndarray) -> str:
    return "[" + ",".join(map(format_float, values.ravel())) + "]"


def header_record(ds: Dataset) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "d_acoustic": ds.d_acoustic,
        "d_linguistic": ds.d_linguistic,
        "num_classes": ds.num_classes,
        "split": ds.split,
        "count": len(ds.utterances),
    }


def dumps_utterance(u: Utterance) -> str:
    return (
        f'{{"id": {json.dumps(u.id)}, "label": {int(u.label)}, "frames": {u.frames}, '
        f'"acoustic": {format_floats(u.acoustic)}, "teacher": {format_floats(u.teacher)}}}'
    )


def write_atomic(path, lines) -> None:
    """Write ``lines`` to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def save_dataset(ds: Dataset, path) -> None:
    ds.validate()  # before touching the file system
    lines = [json.dumps(header_record(ds))] + [dumps_utterance(u) for u in ds.utterances]
    write_atomic(path, lines)


def _require(rec: dict, key: str, kind, lineno: int):
    if key not in rec:
        raise ParseError(f"missing field {key!r}", lineno)
    val = rec[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise ParseError(f"field {key!r} must be an integer", lineno)
    if kind is str and not isinstance(val, str):
        raise ParseError(f"field {key!r} must be a string", lineno)
    if kind is list and not isinstance(val, list):
        raise ParseError(f"field {key!r} must be an array", lineno)
    return val


def _parse_line(text: str, lineno: int) -> dict:
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed record ({exc.msg})", lineno) from None
    if not isinstance(rec, dict):
        raise ParseError("record is not an object", lineno)
    return rec


def _float_array(values: list, key: str, lineno: int) -> np.ndarray:
    try:
        return np.array(values, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError(f"field {key!r} must contain only numbers", lineno) from None


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file: missing header record", 1)
    head = _parse_line(lines[0], 1)
    version = _require(head, "format_version", int, 1)
    if version != FORMAT_VERSION:
        raise ParseError(f"unsupported format_version {version}", 1)
    d_a = _require(head, "d_acoustic", int, 1)
    d_l = _require(head, "d_linguistic", int, 1)
    k = _require(head, "num_classes", int, 1)
    split = _require(head, "split", str, 1)
    count = _require(head, "count", int, 1)
    utts = []
    for lineno, line in enumerate(lines[1:], start=2):
        rec = _parse_line(line, lineno)
        uid = _require(rec, "id", str, lineno)
        label = _require(rec, "label", int, lineno)
        frames = _require(rec, "frames", int, lineno)
        acoustic = _float_array(_require(rec, "acoustic", list, lineno), "acoustic", lineno)
        teacher = _float_array(_require(rec, "teacher", list, lineno), "teacher", lineno)
        if frames < 1 or acoustic.size != frames * d_a:
            raise ValidationError(
                f"utterance {uid!r}: acoustic has {acoustic.size} values, expected {frames} x {d_a}"
            )
        if teacher.size != d_l:
            raise ValidationError(f"utterance {uid!r}: teacher length {teacher.size} != d_linguistic {d_l}")
        utts.append(Utterance(uid, acoustic.reshape(frames, d_a), teacher.reshape(1, d_l), label))
    if len(utts) != count:
        raise ParseError(f"header announces {count} records, file has {len(utts)}", len(lines))
    return Dataset(d_a, d_l, k, split, utts).validate()
