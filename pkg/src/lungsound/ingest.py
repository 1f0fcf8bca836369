"""Reading ICBHI-style recordings and diagnoses into labeled audio sets."""
from __future__ import annotations

import csv
import enum
import io
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class IngestError(ValueError):
    """Malformed input data (audio, file names, diagnosis tables)."""


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int
    source_id: str = ""

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1 or s.size == 0:
            raise ValueError("samples must be a non-empty 1-d sequence")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if np.abs(s).max() > 1.0:
            raise ValueError("amplitudes must lie in [-1, 1]")
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


# ---------------------------------------------------------------- WAV

_PCM = 1
_FLOAT = 3
_EXTENSIBLE = 0xFFFE


def parse_wav(data: bytes, source_id: str = "") -> AudioClip:
    """Decode a RIFF/WAVE byte string into a mono clip.

    Handles integer PCM of 8/16/24/32 bits and 32-bit IEEE float, one or two
    channels. Integer samples are divided by the magnitude of the type's most
    negative value (so int16 maps to [-1, 32767/32768]); channels are averaged.
    """
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise IngestError("malformed header: not a RIFF/WAVE stream")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos : pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + size]
        if cid == b"fmt ":
            if len(body) < 16:
                raise IngestError("malformed header: short fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", body)
            if fmt[0] == _EXTENSIBLE:
                if len(body) < 40:
                    raise IngestError("malformed header: short extensible fmt chunk")
                (sub,) = struct.unpack_from("<H", body, 24)
                fmt = (sub,) + fmt[1:]
        elif cid == b"data":
            # some writers leave the size field bogus; take what is there
            payload = data[pos + 8 : min(len(data), pos + 8 + size)]
        pos += 8 + size + (size & 1)
    if fmt is None or payload is None:
        raise IngestError("malformed header: missing fmt or data chunk")
    tag, channels, rate, _, _, bits = fmt
    if channels not in (1, 2):
        raise IngestError(f"unsupported codec: {channels} channels")
    if rate == 0:
        raise IngestError("malformed header: zero sample rate")
    if tag == _PCM and bits in (8, 16, 24, 32):
        samples = _decode_pcm(payload, bits)
    elif tag == _FLOAT and bits == 32:
        samples = np.frombuffer(payload[: len(payload) // 4 * 4], dtype="<f4").astype(np.float64)
        samples = np.clip(samples, -1.0, 1.0)
    else:
        raise IngestError(f"unsupported codec: format tag {tag}, {bits} bits")
    frames = samples.size // channels
    if frames == 0:
        raise IngestError("zero-length data chunk")
    mono = samples[: frames * channels].reshape(frames, channels).mean(axis=1)
    return AudioClip(mono, int(rate), source_id)


def _decode_pcm(payload: bytes, bits: int) -> np.ndarray:
    width = bits // 8
    raw = payload[: len(payload) // width * width]
    if bits == 8:
        return (np.frombuffer(raw, dtype=np.uint8).astype(np.float64) - 128.0) / 128.0
    if bits == 24:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        v = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        v = np.where(v >= 1 << 23, v - (1 << 24), v)
        return v / float(1 << 23)
    dtype = {16: "<i2", 32: "<i4"}[bits]
    return np.frombuffer(raw, dtype=dtype).astype(np.float64) / float(1 << (bits - 1))


def encode_wav(samples, sample_rate: int, bits: int = 16, channels: int = 1) -> bytes:
    """Write integer PCM. ``samples`` is (frames,) or (frames, channels) in [-1, 1]."""
    a = np.asarray(samples, dtype=np.float64).reshape(-1, channels)
    scale = float(1 << (bits - 1))
    if bits == 8:
        pcm = np.clip(np.round(a * 128 + 128), 0, 255).astype(np.uint8).tobytes()
    elif bits == 24:
        v = np.clip(np.round(a * scale), -scale, scale - 1).astype(np.int32).reshape(-1)
        pcm = np.stack([v & 0xFF, (v >> 8) & 0xFF, (v >> 16) & 0xFF], axis=1).astype(np.uint8).tobytes()
    else:
        dtype = {16: "<i2", 32: "<i4"}[bits]
        pcm = np.clip(np.round(a * scale), -scale, scale - 1).astype(dtype).tobytes()
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", _PCM, channels, sample_rate, sample_rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(pcm)) + pcm
    if len(pcm) & 1:
        body += b"\x00"
    return b"RIFF" + struct.pack("<I", len(body)) + body


def load_clip(path) -> AudioClip:
    path = Path(path)
    try:
        return parse_wav(path.read_bytes(), source_id=path.stem)
    except IngestError as exc:
        raise IngestError(f"{path}: {exc}") from None


# ---------------------------------------------------------------- file names


class ChestLocation(enum.Enum):
    TRACHEA = "Tc"
    LEFT_ANTERIOR = "Al"
    RIGHT_ANTERIOR = "Ar"
    LEFT_POSTERIOR = "Pl"
    RIGHT_POSTERIOR = "Pr"
    LEFT_LATERAL = "Ll"
    RIGHT_LATERAL = "Lr"


class AcquisitionMode(enum.Enum):
    SINGLE_CHANNEL = "sc"
    MULTI_CHANNEL = "mc"


@dataclass(frozen=True)
class RecordingMeta:
    patient_id: int
    recording_index: str
    chest_location: ChestLocation
    acquisition_mode: AcquisitionMode
    equipment: str


def parse_filename(name: str) -> RecordingMeta:
    """Split ``{patient}_{index}_{location}_{mode}_{equipment}.wav``."""
    stem = Path(name).name
    if stem.lower().endswith(".wav"):
        stem = stem[:-4]
    parts = stem.split("_")
    if len(parts) != 5:
        raise IngestError(f"wrong field count in {name!r}: expected 5, got {len(parts)}")
    patient, index, loc, mode, equipment = parts
    if not patient.isdigit():
        raise IngestError(f"non-numeric patient id in {name!r}")
    try:
        location = ChestLocation(loc)
    except ValueError:
        raise IngestError(f"unknown chest location {loc!r} in {name!r}") from None
    try:
        acq = AcquisitionMode(mode)
    except ValueError:
        raise IngestError(f"unknown acquisition mode {mode!r} in {name!r}") from None
    return RecordingMeta(int(patient), index, location, acq, equipment)


# ---------------------------------------------------------------- diagnoses

DIAGNOSES = ("COPD", "asthma", "URTI", "LRTI", "bronchiectasis", "pneumonia", "bronchiolitis", "healthy")
_DIAG_LOOKUP = {d.lower(): d for d in DIAGNOSES}


def load_diagnoses(text: str) -> dict[int, str]:
    """Parse ``patient_id<sep>diagnosis`` rows (tab- or comma-separated).

    The separator is picked from the first data row and must be used
    throughout. Diagnoses match case-insensitively and are returned in
    canonical spelling.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    table: dict[int, str] = {}
    sep = None
    for lineno, line in enumerate(lines, 1):
        if sep is None:
            sep = "\t" if "\t" in line else ","
        fields = [f.strip() for f in line.split(sep)]
        if len(fields) != 2:
            raise IngestError(f"line {lineno}: expected 'patient_id{sep!r}diagnosis', got {line!r}")
        pid, diag = fields
        if not pid.isdigit():
            if lineno == 1 and diag.lower() not in _DIAG_LOOKUP:
                continue  # header row
            raise IngestError(f"line {lineno}: non-numeric patient id {pid!r}")
        canonical = _DIAG_LOOKUP.get(diag.lower())
        if canonical is None:
            raise IngestError(f"line {lineno}: unknown diagnosis {diag!r}")
        if int(pid) in table:
            raise IngestError(f"line {lineno}: duplicate patient id {pid}")
        table[int(pid)] = canonical
    return table


# ---------------------------------------------------------------- label schemes


@dataclass(frozen=True)
class LabelScheme:
    name: str
    classes: tuple[str, ...]
    mapping: dict = field(hash=False)
    healthy: str = "healthy"

    def label_of(self, diagnosis: str) -> str | None:
        """Class for a diagnosis, or None when the scheme excludes it."""
        return self.mapping.get(diagnosis)

    def index(self, label: str) -> int:
        return self.classes.index(label)

    @property
    def healthy_index(self) -> int:
        return self.classes.index(self.healthy)


TERNARY = LabelScheme(
    "ternary",
    ("chronic", "non-chronic", "healthy"),
    {
        "COPD": "chronic",
        "bronchiectasis": "chronic",
        "asthma": "chronic",
        "pneumonia": "non-chronic",
        "URTI": "non-chronic",
        "bronchiolitis": "non-chronic",
        "LRTI": "non-chronic",
        "healthy": "healthy",
    },
)

SIX_CLASS = LabelScheme(
    "six",
    ("COPD", "pneumonia", "healthy", "URTI", "bronchiectasis", "bronchiolitis"),
    {d: d for d in ("COPD", "pneumonia", "healthy", "URTI", "bronchiectasis", "bronchiolitis")},
)

SCHEMES = {"ternary": TERNARY, "six": SIX_CLASS}


def get_scheme(name: str) -> LabelScheme:
    try:
        return SCHEMES[name]
    except KeyError:
        raise ValueError(f"unknown scheme {name!r}; choose from {sorted(SCHEMES)}") from None


# ---------------------------------------------------------------- datasets


@dataclass(frozen=True)
class Recording:
    source_id: str
    patient_id: int
    label: str
    path: Path


@dataclass
class AudioSet:
    scheme: LabelScheme
    recordings: list[Recording]
    dropped: int = 0

    def counts(self) -> dict[str, int]:
        c = Counter(r.label for r in self.recordings)
        return {label: c.get(label, 0) for label in self.scheme.classes}

    def __len__(self):
        return len(self.recordings)


def build_dataset(audio_dir, diagnoses: dict[int, str], scheme: LabelScheme) -> AudioSet:
    """Label every ``*.wav`` in ``audio_dir`` under ``scheme``.

    Recordings whose diagnosis the scheme excludes are dropped and counted.
    Output is sorted by source id so listing order never matters.
    """
    recordings = []
    dropped = 0
    for path in sorted(Path(audio_dir).glob("*.wav"), key=lambda p: p.name):
        meta = parse_filename(path.name)
        if meta.patient_id not in diagnoses:
            raise IngestError(f"{path.name}: patient {meta.patient_id} has no diagnosis entry")
        label = scheme.label_of(diagnoses[meta.patient_id])
        if label is None:
            dropped += 1
            continue
        recordings.append(Recording(path.stem, meta.patient_id, label, path))
    return AudioSet(scheme, recordings, dropped)


MANIFEST_HEADER = ("source_id", "patient_id", "label", "scheme")


def write_manifest(path, audio_set: AudioSet) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_HEADER)
        for r in audio_set.recordings:
            writer.writerow((r.source_id, r.patient_id, r.label, audio_set.scheme.name))


def read_manifest(path) -> list[dict]:
    text = Path(path).read_text()
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != MANIFEST_HEADER:
        raise IngestError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
    rows = list(reader)
    for row in rows:
        row["patient_id"] = int(row["patient_id"])
    return rows
