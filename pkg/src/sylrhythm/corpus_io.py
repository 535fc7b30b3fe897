"""Corpus ingestion: JSON-lines manifests, WAV audio and syllable TSVs."""

import json
import math
import struct
import warnings
from collections import OrderedDict
from dataclasses import dataclass, asdict
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.io import wavfile

from .errors import AnnotationError, AudioFormatError, ManifestError

TARGET_RATE = 16000
MAX_SENTENCE_DURATION = 20.0
ANNOTATION_TOLERANCE = 1e-3

_MANIFEST_FIELDS = ("sentence_id", "audio_path", "annotation_path", "speaker_id",
                    "corpus_id", "language", "style", "duration")

_WAVE_FORMAT_NAMES = {
    0x0001: "PCM",
    0x0002: "ADPCM",
    0x0003: "IEEE_FLOAT",
    0x0006: "ALAW",
    0x0007: "MULAW",
    0x0011: "IMA_ADPCM",
    0x0055: "MPEG_LAYER3",
    0xFFFE: "EXTENSIBLE",
}


class ManifestWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise AudioFormatError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise AudioFormatError("waveform contains non-finite samples")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class SentenceRecord:
    sentence_id: str
    audio_path: str
    annotation_path: str
    speaker_id: str
    corpus_id: str
    language: str
    style: str
    duration: float

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class Interval:
    onset: float
    offset: float
    label: str

    @property
    def duration(self):
        return self.offset - self.onset


@dataclass(frozen=True)
class SyllableAnnotation:
    intervals: tuple

    def __len__(self):
        return len(self.intervals)

    @property
    def onsets(self):
        return np.array([iv.onset for iv in self.intervals], dtype=float)

    @property
    def durations(self):
        return np.array([iv.duration for iv in self.intervals], dtype=float)


class Manifest(list):
    """List of :class:`SentenceRecord` with grouping helpers."""

    def _group(self, key):
        groups = OrderedDict()
        for rec in self:
            groups.setdefault(getattr(rec, key), []).append(rec)
        return groups

    def by_speaker(self):
        return self._group("speaker_id")

    def by_corpus(self):
        return self._group("corpus_id")


def load_manifest(path):
    """Read a JSON-lines manifest.

    Relative ``audio_path``/``annotation_path`` entries are resolved against
    the manifest's directory. Sentences longer than 20 s are dropped with a
    :class:`ManifestWarning`; any other invalid line raises
    :class:`ManifestError` naming the line number.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    base = path.parent
    records = Manifest()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}:{lineno}: expected a JSON object")
            missing = [f for f in _MANIFEST_FIELDS if f not in obj]
            if missing:
                raise ManifestError(f"{path}:{lineno}: missing field(s) {', '.join(missing)}")
            try:
                duration = float(obj["duration"])
            except (TypeError, ValueError):
                raise ManifestError(f"{path}:{lineno}: duration is not a number") from None
            if not math.isfinite(duration) or duration <= 0:
                raise ManifestError(f"{path}:{lineno}: duration must be positive, got {duration}")
            if duration > MAX_SENTENCE_DURATION:
                warnings.warn(f"{path}:{lineno}: sentence {obj['sentence_id']!r} is "
                              f"{duration:g} s long (> {MAX_SENTENCE_DURATION:g} s); rejected",
                              ManifestWarning, stacklevel=2)
                continue
            resolved = {}
            for key in ("audio_path", "annotation_path"):
                p = Path(str(obj[key]))
                if not p.is_absolute():
                    p = base / p
                if not p.is_file():
                    raise ManifestError(f"{path}:{lineno}: {key} does not exist: {p}")
                resolved[key] = str(p)
            records.append(SentenceRecord(
                sentence_id=str(obj["sentence_id"]),
                audio_path=resolved["audio_path"],
                annotation_path=resolved["annotation_path"],
                speaker_id=str(obj["speaker_id"]),
                corpus_id=str(obj["corpus_id"]),
                language=str(obj["language"]),
                style=str(obj["style"]),
                duration=duration,
            ))
    return records


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            d = rec.to_dict() if isinstance(rec, SentenceRecord) else dict(rec)
            fh.write(json.dumps({k: d[k] for k in _MANIFEST_FIELDS}) + "\n")


def _wav_format(path):
    """Return (format_tag, bits_per_sample, n_channels) from the fmt chunk."""
    with open(path, "rb") as fh:
        header = fh.read(12)
        if len(header) < 12 or header[:4] not in (b"RIFF", b"RIFX") or header[8:12] != b"WAVE":
            raise AudioFormatError(f"{path}: not a RIFF/WAVE file")
        endian = "<" if header[:4] == b"RIFF" else ">"
        while True:
            chunk = fh.read(8)
            if len(chunk) < 8:
                raise AudioFormatError(f"{path}: truncated file (no fmt chunk)")
            cid, size = chunk[:4], struct.unpack(endian + "I", chunk[4:])[0]
            if cid == b"fmt ":
                body = fh.read(size)
                if len(body) < 16:
                    raise AudioFormatError(f"{path}: truncated fmt chunk")
                tag, channels = struct.unpack(endian + "HH", body[:4])
                bits = struct.unpack(endian + "H", body[14:16])[0]
                if tag == 0xFFFE and len(body) >= 26:
                    # WAVE_FORMAT_EXTENSIBLE: real tag is the first two bytes of the GUID
                    tag = struct.unpack(endian + "H", body[24:26])[0]
                return tag, bits, channels
            fh.seek(size + (size & 1), 1)


def _design_resampler(up, down, fs_in, fs_out):
    f_up = fs_in * up
    cutoff = 0.45 * min(fs_in, fs_out)
    width = 0.1 * min(fs_in, fs_out)
    numtaps, beta = signal.kaiserord(80.0, width / (0.5 * f_up))
    numtaps |= 1
    return signal.firwin(numtaps, cutoff, window=("kaiser", beta), fs=f_up) * up


def resample(samples, fs_in, fs_out=TARGET_RATE):
    """Windowed-sinc polyphase resampling from ``fs_in`` to ``fs_out``."""
    if fs_in == fs_out:
        return samples
    ratio = Fraction(int(fs_out), int(fs_in))
    up, down = ratio.numerator, ratio.denominator
    taps = _design_resampler(up, down, fs_in, fs_out)
    return signal.resample_poly(samples, up, down, window=taps)


def read_audio(path, target_rate=TARGET_RATE):
    """Load a WAV file as a mono float64 :class:`Waveform` at ``target_rate``.

    Accepts PCM16 and float32 in one or two channels. Stereo is averaged;
    integer samples are divided by 32768.
    """
    tag, bits, channels = _wav_format(path)
    name = _WAVE_FORMAT_NAMES.get(tag, f"0x{tag:04X}")
    if not ((tag == 1 and bits == 16) or (tag == 3 and bits == 32)):
        raise AudioFormatError(f"{path}: unsupported encoding {name} ({bits}-bit); "
                               "expected PCM 16-bit or IEEE_FLOAT 32-bit")
    if channels not in (1, 2):
        raise AudioFormatError(f"{path}: {channels} channels not supported")
    with warnings.catch_warnings():
        warnings.simplefilter("error", wavfile.WavFileWarning)
        try:
            fs, data = wavfile.read(path)
        except wavfile.WavFileWarning as exc:
            raise AudioFormatError(f"{path}: truncated file ({exc})") from None
        except (ValueError, struct.error, EOFError) as exc:
            raise AudioFormatError(f"{path}: unreadable WAV data ({exc})") from None
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    return Waveform(resample(x, fs, target_rate), int(target_rate))


def write_audio(path, samples, sample_rate=TARGET_RATE):
    wavfile.write(path, int(sample_rate), np.asarray(samples, dtype=np.float32))


def load_annotation(path, duration):
    """Parse a syllable TSV (``onset<TAB>offset<TAB>label``).

    Rows are sorted by onset. Zero-length or negative intervals, overlaps,
    and offsets beyond ``duration`` + 1 ms raise :class:`AnnotationError`.
    """
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if lineno == 1 and [p.strip().lower() for p in parts[:3]] == ["onset", "offset", "label"]:
                continue
            if len(parts) < 2:
                raise AnnotationError(f"{path}:{lineno}: expected onset, offset, label columns")
            try:
                onset, offset = float(parts[0]), float(parts[1])
            except ValueError:
                raise AnnotationError(f"{path}:{lineno}: non-numeric time value") from None
            label = parts[2] if len(parts) > 2 else ""
            rows.append((onset, offset, label, lineno))
    rows.sort(key=lambda r: r[0])
    return _validated(rows, duration, path)


def _validated(rows, duration, where):
    intervals = []
    prev = None
    for onset, offset, label, lineno in rows:
        loc = f"{where}:{lineno}"
        if onset < 0:
            raise AnnotationError(f"{loc}: negative onset {onset}")
        if offset <= onset:
            raise AnnotationError(f"{loc}: zero or negative duration interval ({onset}, {offset})")
        if prev is not None:
            if onset == prev.onset:
                raise AnnotationError(f"{loc}: duplicate onset {onset}")
            if onset < prev.offset:
                raise AnnotationError(f"{loc}: interval ({onset}, {offset}) overlaps "
                                      f"({prev.onset}, {prev.offset})")
        if duration is not None and offset > duration + ANNOTATION_TOLERANCE:
            raise AnnotationError(f"{loc}: offset {offset} exceeds duration {duration}")
        prev = Interval(onset, offset, label)
        intervals.append(prev)
    return SyllableAnnotation(tuple(intervals))


def annotation_from_intervals(intervals, duration=None):
    """Build a validated annotation from ``(onset, offset, label)`` triples."""
    rows = sorted(((float(a), float(b), str(c), i + 1) for i, (a, b, c) in enumerate(intervals)),
                  key=lambda r: r[0])
    return _validated(rows, duration, "<intervals>")


def write_annotation(path, annotation):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("onset\toffset\tlabel\n")
        for iv in annotation.intervals:
            fh.write(f"{iv.onset:.6f}\t{iv.offset:.6f}\t{iv.label}\n")
