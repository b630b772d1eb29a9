"""Deterministic i.i.d. CHSH trial simulation plus trial-file formats.

The generator is Philox4x64 (counter-based, published constants) driven
through numpy; a configuration's seed fixes the byte-exact trial stream.
Each trial consumes two uniforms, (u_z, u_c) at stream positions
(2i, 2i+1), mapped through fixed-order inverse CDFs (the four settings in
canonical order, then the four outcomes of the selected setting).  Because
Philox advances in counter blocks of four 64-bit draws, any partition of
the work at even trial boundaries reproduces the single-worker stream
bit for bit (see ``uniforms_for_range``).

Trial files use the "BTR1" layout: a 16-byte little-endian header (magic
``BTR1``, version u16, flags u16, trial count u64) followed by one byte
per trial holding bits [x, y, a, b] in positions 0..3.  A plain CSV form
(columns x,y,a,b) is provided for interoperability.
"""

from __future__ import annotations

import csv as _csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from ._kernels import bin_trials
from .bell_model import BiasPolytope, ConditionalDistribution, InputDistribution, bias_vertices
from .calibration import CountTable

__all__ = [
    "PRNG_VERSION",
    "SimConfig",
    "sample_trials",
    "sample_codes",
    "biased_inputs",
    "tally",
    "write_trials",
    "read_trials",
    "iter_trial_codes",
    "codes_to_bits",
    "bits_to_codes",
    "write_trials_csv",
    "read_trials_csv",
    "TrialFileError",
]

PRNG_VERSION = "philox4x64/numpy-v1"
BTR1_MAGIC = b"BTR1"
BTR1_VERSION = 1
_HEADER = struct.Struct("<4sHHQ")

DEFAULT_CHUNK = 1 << 20


class TrialFileError(IOError):
    """Malformed, truncated, or wrong-version trial file."""


@dataclass(frozen=True)
class SimConfig:
    """An honest-device i.i.d. source: behaviour, input law, size, seed."""

    nu: ConditionalDistribution
    input_dist: InputDistribution
    n: int
    rng_seed: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must fit in 64 bits")


def _generator(seed: int, counter: int = 0) -> np.random.Generator:
    bg = np.random.Philox(key=seed)
    if counter:
        bg.advance(counter)
    return np.random.Generator(bg)


def uniforms_for_range(seed: int, start_trial: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    """(u_z, u_c) uniforms for trials [start_trial, start_trial + n).

    ``start_trial`` must be even so the offset lands on a Philox counter
    boundary (4 draws per counter step, 2 draws per trial).
    """
    if start_trial % 2:
        raise ValueError("partition boundaries must be even trial indices")
    gen = _generator(seed, counter=start_trial // 2)
    u = gen.random(2 * n)
    return u[0::2], u[1::2]


def sample_codes(cfg: SimConfig, chunk: int = DEFAULT_CHUNK) -> Iterator[np.ndarray]:
    """Yield uint8 cell-code arrays (z*4 + c) totalling cfg.n trials."""
    cum_z = np.cumsum(cfg.input_dist.probs)
    cum_c = np.cumsum(cfg.nu.probs, axis=1)
    chunk += chunk % 2  # keep chunk boundaries even for partitionability
    done = 0
    while done < cfg.n:
        m = min(chunk, cfg.n - done)
        u_z, u_c = uniforms_for_range(cfg.rng_seed, done, m)
        yield bin_trials(u_z, u_c, cum_z, cum_c)
        done += m


def sample_trials(cfg: SimConfig, chunk: int = DEFAULT_CHUNK) -> Iterator[np.ndarray]:
    """Yield (m, 4) uint8 arrays of [x, y, a, b] rows totalling cfg.n trials."""
    for codes in sample_codes(cfg, chunk):
        yield codes_to_bits(codes)


def codes_to_bits(codes: np.ndarray) -> np.ndarray:
    """Cell codes z*4+c to an (n, 4) array of [x, y, a, b] bits."""
    z, c = codes >> 2, codes & 3
    return np.stack([z & 1, z >> 1, c & 1, c >> 1], axis=1).astype(np.uint8)


def bits_to_codes(bits: np.ndarray) -> np.ndarray:
    """(n, 4) [x, y, a, b] rows to cell codes z*4+c."""
    bits = np.asarray(bits, dtype=np.uint8)
    z = bits[:, 0] + 2 * bits[:, 1]
    c = bits[:, 2] + 2 * bits[:, 3]
    return (z * 4 + c).astype(np.uint8)


def biased_inputs(
    eps_b: float,
    schedule: int | Iterable[float],
    n: int,
    rng_seed: int,
) -> np.ndarray:
    """(n, 2) array of (x, y) drawn from a bias-polytope vertex or mixture.

    ``schedule`` is a vertex index (0..3) or four mixture weights over the
    vertices of ``bias_vertices(eps_b)``.
    """
    poly: BiasPolytope = bias_vertices(eps_b)
    if isinstance(schedule, (int, np.integer)):
        dist = poly.vertices[int(schedule)].probs
    else:
        wts = np.asarray(list(schedule), dtype=float)
        if wts.shape != (4,) or np.any(wts < 0):
            raise ValueError("mixture schedule needs 4 non-negative weights")
        wts = wts / wts.sum()
        dist = wts @ poly.as_array()
    gen = _generator(rng_seed)
    z = np.searchsorted(np.cumsum(dist), gen.random(n), side="right")
    z = np.minimum(z, 3).astype(np.uint8)
    return np.stack([z & 1, z >> 1], axis=1)


def tally(stream: Iterable) -> CountTable:
    """Count cells over a stream of code chunks / bit rows / TrialRecords."""
    from .protocol import as_code_array  # local import avoids a cycle

    counts = np.zeros(16, dtype=np.int64)
    for item in _iter_items(stream):
        codes = as_code_array(item)
        counts += np.bincount(codes, minlength=16)[:16]
    return CountTable(counts.reshape(4, 4))


def _iter_items(stream):
    from .bell_model import TrialRecord

    if isinstance(stream, (np.ndarray, TrialRecord)):
        yield stream
        return
    yield from stream


# ---------------------------------------------------------------------------
# BTR1 trial files
# ---------------------------------------------------------------------------


def _codes_to_file_bytes(codes: np.ndarray) -> np.ndarray:
    z, c = codes >> 2, codes & 3
    return (z | (c << 2)).astype(np.uint8)  # bits [x, y, a, b]


def _file_bytes_to_codes(raw: np.ndarray) -> np.ndarray:
    if raw.size and raw.max() > 15:
        raise TrialFileError("trial byte has bits set outside positions 0..3")
    z = raw & 3
    c = (raw >> 2) & 3
    return (z * 4 + c).astype(np.uint8)


def write_trials(stream: Iterable, path: str | Path) -> int:
    """Write a trial stream to a BTR1 file; returns the trial count."""
    from .protocol import as_code_array

    path = Path(path)
    total = 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BTR1_MAGIC, BTR1_VERSION, 0, 0))
        for item in _iter_items(stream):
            codes = as_code_array(item)
            fh.write(_codes_to_file_bytes(codes).tobytes())
            total += codes.size
        fh.seek(0)
        fh.write(_HEADER.pack(BTR1_MAGIC, BTR1_VERSION, 0, total))
    return total


def _read_header(fh, path):
    head = fh.read(_HEADER.size)
    if len(head) != _HEADER.size:
        raise TrialFileError(f"{path}: truncated header")
    magic, version, _flags, count = _HEADER.unpack(head)
    if magic != BTR1_MAGIC:
        raise TrialFileError(f"{path}: not a BTR1 file (magic {magic!r})")
    if version != BTR1_VERSION:
        raise TrialFileError(f"{path}: unsupported BTR1 version {version}")
    return count


def iter_trial_codes(path: str | Path, chunk: int = DEFAULT_CHUNK) -> Iterator[np.ndarray]:
    """Stream a BTR1 file as uint8 cell-code chunks."""
    path = Path(path)
    with open(path, "rb") as fh:
        count = _read_header(fh, path)
        remaining = count
        while remaining > 0:
            raw = np.fromfile(fh, dtype=np.uint8, count=min(chunk, remaining))
            if raw.size == 0:
                raise TrialFileError(
                    f"{path}: payload truncated ({remaining} trials missing)"
                )
            yield _file_bytes_to_codes(raw)
            remaining -= raw.size


def read_trials(path: str | Path) -> np.ndarray:
    """Read a whole BTR1 file into an (n, 4) array of [x, y, a, b] rows."""
    parts = [codes_to_bits(c) for c in iter_trial_codes(path)]
    if not parts:
        return np.zeros((0, 4), dtype=np.uint8)
    return np.concatenate(parts)


def write_trials_csv(stream: Iterable, path: str | Path) -> int:
    from .protocol import as_code_array

    total = 0
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["x", "y", "a", "b"])
        for item in _iter_items(stream):
            for row in codes_to_bits(as_code_array(item)):
                writer.writerow([int(v) for v in row])
                total += 1
    return total


def read_trials_csv(path: str | Path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = _csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["x", "y", "a", "b"]:
            raise TrialFileError(f"{path}: expected header x,y,a,b")
        rows = [[int(v) for v in row] for row in reader if row]
    arr = np.array(rows, dtype=np.uint8).reshape(-1, 4)
    if arr.size and arr.max() > 1:
        raise TrialFileError(f"{path}: non-bit value in trial table")
    return arr
