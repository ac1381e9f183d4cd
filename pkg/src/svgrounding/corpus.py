"""Synthetic grounding corpus, its binary container and batch iteration.

A sample pairs a video feature sequence with a spectrogram-shaped audio
query.  Inside the planted span the video shows the queried event; the
remaining frames show two other events, so the span can only be found by
reading the audio.  The audio spells the event as a fixed sequence of
phoneme tokens, part of which is overwritten by tokens from a disjoint
noise vocabulary.
"""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .numerics import rng as rngs
from .numerics.checkpoint import CheckpointError, read_array, read_exact, write_array
from .signal import sample_fixed

MAGIC = b"VGCD"
VERSION = 1
SPLITS = ("train", "val", "test")


class CorpusError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_train: int = 512
    n_val: int = 128
    n_test: int = 256
    n_v: int = 32
    d_v: int = 32
    n_a: int = 256
    n_mel: int = 128
    n_events: int = 12
    phonemes_per_event: int = 6
    n_phonemes: int = 24
    n_noise_tokens: int = 8
    sigma: float = 0.1
    corruption_range: tuple[float, float] = (0.5, 0.7)
    span_range: tuple[float, float] = (0.15, 0.6)

    def __post_init__(self):
        self.corruption_range = tuple(self.corruption_range)
        self.span_range = tuple(self.span_range)
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and f.name != "sigma":
                if v <= 0:
                    raise CorpusError(f"{f.name} must be positive, got {v}")
        if self.sigma < 0:
            raise CorpusError("sigma must be non-negative")
        lo, hi = self.corruption_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise CorpusError(f"corruption range {self.corruption_range} not within [0, 1]")
        lo, hi = self.span_range
        if not 0.0 < lo <= hi <= 1.0 or math.ceil(lo * self.n_v) > math.floor(hi * self.n_v):
            raise CorpusError(f"span range {self.span_range} admits no length at n_v={self.n_v}")
        if self.n_events < 3:
            raise CorpusError("need at least 3 event types (target + two distractors)")

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]


@dataclass
class GroundingSample:
    video: np.ndarray
    audio: np.ndarray
    span: tuple[int, int]
    sample_id: str
    event: int = -1
    valid_len: int = 0


@dataclass
class Dataset:
    split: str
    video: np.ndarray  # (n, N_v, d_v)
    audio: np.ndarray  # (n, N_a, n_mel)
    spans: np.ndarray  # (n, 2) inclusive frame indices
    ids: list[str]
    events: np.ndarray  # (n,) event label or -1
    valid_len: np.ndarray  # (n,) valid audio rows
    tables: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.ids)

    def __getitem__(self, i: int) -> GroundingSample:
        return GroundingSample(self.video[i], self.audio[i], tuple(int(v) for v in self.spans[i]),
                               self.ids[i], int(self.events[i]), int(self.valid_len[i]))

    @property
    def n_v(self) -> int:
        return self.video.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.split, self.video[idx], self.audio[idx], self.spans[idx],
                       [self.ids[i] for i in idx], self.events[idx], self.valid_len[idx],
                       self.tables)


# generation

def make_tables(cfg: SynthConfig, seed: int) -> dict[str, np.ndarray]:
    r = rngs.stream(seed, "corpus/tables")
    return {
        "event_video": r.normal(size=(cfg.n_events, cfg.d_v)),
        "phonemes": r.normal(size=(cfg.n_phonemes, cfg.n_mel)),
        "noise_tokens": r.normal(size=(cfg.n_noise_tokens, cfg.n_mel)),
        "event_tokens": r.integers(0, cfg.n_phonemes,
                                   size=(cfg.n_events, cfg.phonemes_per_event)).astype(np.float64),
    }


def _token_rows(n_a: int, n_tokens: int) -> np.ndarray:
    return (np.arange(n_a) * n_tokens) // n_a


def _fill_distractors(r, owner, lo, hi, target, lmin, lmax, n_events, reverse=False):
    """Tile owner[lo:hi] with segments of non-target events, lengths drawn like the target's.

    Segments are laid outward from the target so neither position nor
    length singles it out; neighbouring segments always differ.
    """
    prev = target
    pos = hi if reverse else lo
    while (pos > lo) if reverse else (pos < hi):
        seg = int(r.integers(lmin, lmax + 1))
        choices = [k for k in range(n_events) if k not in (target, prev)]
        ev = choices[int(r.integers(len(choices)))]
        if reverse:
            owner[max(lo, pos - seg):pos] = ev
            pos -= seg
        else:
            owner[pos:min(hi, pos + seg)] = ev
            pos += seg
        prev = ev


def synth_split(cfg: SynthConfig, tables: dict, split: str, seed: int) -> Dataset:
    r = rngs.stream(seed, f"corpus/{split}")
    n = cfg.split_size(split)
    n_v, n_a = cfg.n_v, cfg.n_a
    lmin = math.ceil(cfg.span_range[0] * n_v)
    lmax = math.floor(cfg.span_range[1] * n_v)
    token_of_row = _token_rows(n_a, cfg.phonemes_per_event)
    video = np.empty((n, n_v, cfg.d_v))
    audio = np.empty((n, n_a, cfg.n_mel))
    spans = np.empty((n, 2), dtype=np.int64)
    events = np.empty(n, dtype=np.int64)
    for i in range(n):
        e = int(r.integers(cfg.n_events))
        length = int(r.integers(lmin, lmax + 1))
        s = int(r.integers(0, n_v - length + 1))
        t_end = s + length - 1
        owner = np.empty(n_v, dtype=np.int64)
        owner[s:t_end + 1] = e
        _fill_distractors(r, owner, 0, s, e, lmin, lmax, cfg.n_events, reverse=True)
        _fill_distractors(r, owner, t_end + 1, n_v, e, lmin, lmax, cfg.n_events)
        video[i] = tables["event_video"][owner] + cfg.sigma * r.normal(size=(n_v, cfg.d_v))

        tokens = tables["event_tokens"][e].astype(np.int64)
        rows = tables["phonemes"][tokens[token_of_row]]
        alpha = r.uniform(*cfg.corruption_range)
        span_rows = int(round(alpha * n_a))
        if span_rows:
            off = int(r.integers(0, n_a - span_rows + 1))
            junk = r.integers(0, cfg.n_noise_tokens, size=cfg.phonemes_per_event)
            rows = rows.copy()
            rows[off:off + span_rows] = tables["noise_tokens"][junk[token_of_row[:span_rows]]]
        audio[i] = rows + cfg.sigma * r.normal(size=(n_a, cfg.n_mel))
        spans[i] = (s, t_end)
        events[i] = e
    ids = [f"{split}-{i:06d}" for i in range(n)]
    return Dataset(split, video, audio, spans, ids, events, np.full(n, n_a, dtype=np.int64), tables)


def synthesize(cfg: SynthConfig, seed: int) -> dict[str, Dataset]:
    tables = make_tables(cfg, seed)
    return {split: synth_split(cfg, tables, split, seed) for split in SPLITS}


def synthesize_to(cfg: SynthConfig, seed: int, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for split, ds in synthesize(cfg, seed).items():
        paths[split] = out_dir / f"{split}.vgcd"
        write(paths[split], ds)
    return paths


# container format

def dumps(ds: Dataset) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    name = ds.split.encode("utf-8")
    buf.write(struct.pack("<HH", VERSION, len(name)))
    buf.write(name)
    n, n_v, d_v = ds.video.shape
    _, n_a, n_mel = ds.audio.shape
    buf.write(struct.pack("<5I", n, n_v, d_v, n_a, n_mel))
    buf.write(struct.pack("<H", len(ds.tables)))
    for key, arr in ds.tables.items():
        write_array(buf, key, arr)
    for i in range(n):
        sid = ds.ids[i].encode("utf-8")
        buf.write(struct.pack("<H", len(sid)))
        buf.write(sid)
        buf.write(struct.pack("<IIIi", int(ds.spans[i, 0]), int(ds.spans[i, 1]),
                              int(ds.valid_len[i]), int(ds.events[i])))
        buf.write(struct.pack("<4I", n_v, d_v, n_a, n_mel))
        buf.write(np.ascontiguousarray(ds.video[i], dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(ds.audio[i], dtype="<f8").tobytes())
    return buf.getvalue()


def write(path, ds: Dataset) -> None:
    validate(ds)
    Path(path).write_bytes(dumps(ds))


def _read(buf, n: int, what: str) -> bytes:
    try:
        return read_exact(buf, n, what)
    except CheckpointError as exc:
        raise CorpusError(f"corrupt corpus file: {exc}") from None


def loads(raw: bytes) -> Dataset:
    buf = io.BytesIO(raw)
    if _read(buf, 4, "magic") != MAGIC:
        raise CorpusError("not a corpus file (bad magic)")
    version, name_len = struct.unpack("<HH", _read(buf, 4, "header"))
    if version != VERSION:
        raise CorpusError(f"unsupported corpus version {version}")
    split = _read(buf, name_len, "split name").decode("utf-8")
    n, n_v, d_v, n_a, n_mel = struct.unpack("<5I", _read(buf, 20, "dimensions"))
    (n_tables,) = struct.unpack("<H", _read(buf, 2, "table count"))
    tables = {}
    for _ in range(n_tables):
        try:
            key, arr = read_array(buf)
        except CheckpointError as exc:
            raise CorpusError(f"corrupt corpus file: {exc}") from None
        tables[key] = arr
    video = np.empty((n, n_v, d_v))
    audio = np.empty((n, n_a, n_mel))
    spans = np.empty((n, 2), dtype=np.int64)
    valid = np.empty(n, dtype=np.int64)
    events = np.empty(n, dtype=np.int64)
    ids = []
    for i in range(n):
        (sl,) = struct.unpack("<H", _read(buf, 2, f"record {i} id length"))
        ids.append(_read(buf, sl, f"record {i} id").decode("utf-8"))
        s, e, valid[i], events[i] = struct.unpack("<IIIi", _read(buf, 16, f"record {i} span"))
        dims = struct.unpack("<4I", _read(buf, 16, f"record {i} dims"))
        if dims != (n_v, d_v, n_a, n_mel):
            raise CorpusError(f"record {i}: payload dims {dims} differ from header "
                              f"{(n_v, d_v, n_a, n_mel)}")
        spans[i] = (s, e)
        video[i] = np.frombuffer(_read(buf, 8 * n_v * d_v, f"record {i} video"),
                                 dtype="<f8").reshape(n_v, d_v)
        audio[i] = np.frombuffer(_read(buf, 8 * n_a * n_mel, f"record {i} audio"),
                                 dtype="<f8").reshape(n_a, n_mel)
    if buf.read(1):
        raise CorpusError("trailing bytes after last record")
    ds = Dataset(split, video, audio, spans, ids, events, valid, tables)
    validate(ds)
    return ds


def load(path) -> Dataset:
    return loads(Path(path).read_bytes())


def validate(ds: Dataset) -> None:
    n_v = ds.video.shape[1]
    for i in range(len(ds)):
        s, e = ds.spans[i]
        if not 0 <= s <= e < n_v:
            raise CorpusError(f"record {i} ({ds.ids[i]}): span ({s}, {e}) outside [0, {n_v})")
    if not (np.isfinite(ds.video).all() and np.isfinite(ds.audio).all()):
        raise CorpusError("non-finite feature values")


# iteration

@dataclass
class Batch:
    video: np.ndarray
    audio: np.ndarray
    spans: np.ndarray
    ids: list[str]
    index: np.ndarray


def batches(ds: Dataset, batch_size: int, seed: int, epoch: int = 0, shuffle: bool = True):
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(ds))
    if shuffle:
        order = rngs.stream(seed, f"batches/{epoch}").permutation(len(ds))
    for lo in range(0, len(ds), batch_size):
        idx = order[lo:lo + batch_size]
        yield Batch(ds.video[idx], ds.audio[idx], ds.spans[idx], [ds.ids[i] for i in idx], idx)


# real features

def seconds_to_frame(tau: float, duration: float, n_v: int) -> int:
    return int(math.floor(tau / duration * (n_v - 1) + 0.5))


def ingest_real(video_file, spectrogram_file, annotation_file, n_v: int = 64, n_a: int = 1024,
                split: str = "real") -> Dataset:
    """Build a dataset from precomputed features.

    ``video_file`` and ``spectrogram_file`` are ``.npz`` archives keyed by
    sample id; ``annotation_file`` holds ``id, start_s, end_s, duration`` rows.
    """
    videos = np.load(video_file)
    specs = np.load(spectrogram_file)
    rows = []
    with open(annotation_file, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            if rec[0].strip() == "id":
                continue
            rows.append([c.strip() for c in rec])
    if not rows:
        raise CorpusError(f"{annotation_file}: no annotation rows")
    vids, auds, spans, valid, ids = [], [], [], [], []
    for sid, ts, te, dur in rows:
        ts, te, dur = float(ts), float(te), float(dur)
        if sid not in videos.files or sid not in specs.files:
            raise CorpusError(f"sample {sid!r} missing from feature files")
        if not 0.0 <= ts <= te <= dur or dur <= 0:
            raise CorpusError(f"sample {sid!r}: span ({ts}, {te}) outside duration {dur}")
        v = np.asarray(videos[sid], dtype=np.float64)
        vids.append(v[(np.arange(n_v) * v.shape[0]) // n_v])
        a, n_valid = sample_fixed(np.asarray(specs[sid], dtype=np.float64), n_a)
        auds.append(a)
        valid.append(n_valid)
        spans.append((seconds_to_frame(ts, dur, n_v), seconds_to_frame(te, dur, n_v)))
        ids.append(sid)
    ds = Dataset(split, np.stack(vids), np.stack(auds), np.asarray(spans, dtype=np.int64), ids,
                 np.full(len(ids), -1, dtype=np.int64), np.asarray(valid, dtype=np.int64))
    validate(ds)
    return ds
