"""WAV files and line-delimited score/trace files."""

import json
import warnings

import numpy as np
from scipy.io import wavfile


class WavFormatError(ValueError):
    pass


def read_wav(path):
    """Read a PCM16 or float32 WAV file as ``(channels, samples)`` floats.

    16-bit samples are scaled to ``[-1, 1)`` by ``1/32768``.
    """
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", wavfile.WavFileWarning)
            rate, data = wavfile.read(path)
    except OSError:
        raise
    except Exception as exc:  # scipy reports malformed headers inconsistently
        raise WavFormatError(f"{path}: malformed WAV file ({exc})") from exc
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise WavFormatError(f"{path}: unsupported sample format {data.dtype}")
    samples = samples.reshape(samples.shape[0], -1).T
    return np.ascontiguousarray(samples), int(rate)


def write_wav(path, samples, sample_rate, subtype="float32"):
    """Write ``(channels, samples)`` data as float32 or PCM16."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if subtype == "float32":
        data = samples.T.astype(np.float32)
    elif subtype == "pcm16":
        data = np.clip(np.round(samples.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown subtype {subtype!r}")
    wavfile.write(path, int(sample_rate), data)


def write_scores(path, records):
    """One JSON object per line."""
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_scores(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
