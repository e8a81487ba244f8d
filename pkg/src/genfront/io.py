"""WAV ingestion, the FTEN feature file format, and key-value run configs."""
from __future__ import annotations

import configparser
import struct
import wave
from dataclasses import fields
from typing import Dict, Tuple

import numpy as np

from .dsp import Waveform

FEATURE_MAGIC = b"FTEN"
FEATURE_VERSION = 1
REQUIRED_RATE = 16000


class InputError(ValueError):
    """Unreadable or unsupported input file."""


def read_wav(path) -> Waveform:
    """PCM16 mono 16 kHz only; samples scaled by 1/32768."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            if fh.getcomptype() != "NONE":
                raise InputError(f"{path}: compressed WAV not supported")
            raw = fh.readframes(fh.getnframes())
    except (wave.Error, EOFError, struct.error) as err:
        raise InputError(f"{path}: malformed WAV ({err})") from err
    except OSError as err:
        raise InputError(f"{path}: {err}") from err
    if width != 2:
        raise InputError(f"{path}: expected 16-bit PCM, got {8 * width}-bit")
    if channels != 1:
        raise InputError(f"{path}: expected mono, got {channels} channels")
    if rate != REQUIRED_RATE:
        raise InputError(f"{path}: unsupported sample rate {rate} (need {REQUIRED_RATE})")
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(samples, rate)


def write_wav(path, w: Waveform):
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())


def write_features(path, values: np.ndarray):
    """FTEN: magic, u16 version, u16 rank, u64 extents, f32 row-major data, all little-endian."""
    values = np.asarray(values)
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<HH", FEATURE_VERSION, values.ndim))
        fh.write(struct.pack(f"<{values.ndim}Q", *values.shape))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != FEATURE_MAGIC:
        raise InputError(f"{path}: not an FTEN feature file")
    version, rank = struct.unpack_from("<HH", blob, 4)
    if version != FEATURE_VERSION:
        raise InputError(f"{path}: unsupported version {version}")
    shape = struct.unpack_from(f"<{rank}Q", blob, 8)
    offset = 8 + 8 * rank
    return np.frombuffer(blob, dtype="<f4", offset=offset, count=int(np.prod(shape))).reshape(shape)


# configs ------------------------------------------------------------------------


def parse_value(text: str):
    """int, float, bool, none, or a comma-separated tuple of those."""
    text = text.strip()
    if "," in text:
        return tuple(parse_value(p) for p in text.split(",") if p.strip())
    low = text.lower()
    if low in ("none", "null", ""):
        return None
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def format_value(value) -> str:
    if isinstance(value, (tuple, list)):
        return ", ".join(format_value(v) for v in value) + ("," if len(value) == 1 else "")
    if value is None:
        return "none"
    return str(value).lower() if isinstance(value, bool) else str(value)


def read_config(text: str) -> Dict[str, Dict[str, object]]:
    """INI-style sections of ``key = value`` lines."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read_string(text)
    return {s: {k: parse_value(v) for k, v in parser.items(s)} for s in parser.sections()}


def write_config(sections: Dict[str, Dict[str, object]]) -> str:
    lines = []
    for name, values in sections.items():
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {format_value(v)}" for k, v in values.items())
        lines.append("")
    return "\n".join(lines)


def dataclass_options(obj) -> Dict[str, object]:
    return {f.name: getattr(obj, f.name) for f in fields(obj)}
