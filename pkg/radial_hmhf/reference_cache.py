"""
On-disk cache of validated reference solutions.

File layout: `key=value` header lines, a blank line, then one value per line
with 17 significant digits. The checksum is a 64-bit FNV-1a over the payload
bytes (everything after the blank line).
"""

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .errors import CacheError, GridError
from .grid import Grid, StateVector

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
DEFAULT_REFERENCE_DT = 1e-6
DEFAULT_VALIDATION_TOL = 5e-6

FNV_OFFSET_BASIS = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK_64 = 0xFFFFFFFFFFFFFFFF

_HEADER_KEYS = ("version", "scheme", "ic", "amplitude", "N", "dt", "T", "checksum")


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & _MASK_64
    return h


@dataclass(frozen=True)
class ReferenceDescriptor:
    """What a reference run is: its resolution, initial condition and acceptance gate."""

    ic: str
    amplitude: float
    n: int
    dt: float
    final_time: float
    scheme: str = "euler"
    validation_tol: float = DEFAULT_VALIDATION_TOL

    @property
    def key(self) -> str:
        return (
            f"{self.scheme}|{self.ic}|{self.amplitude:.17g}|{self.n}|{self.dt:.17g}|{self.final_time:.17g}"
        )


@dataclass(eq=False)
class ReferenceSolution:
    descriptor: ReferenceDescriptor
    values: np.ndarray = field(repr=False)
    checksum: int = 0
    version: int = FORMAT_VERSION
    discrepancy: Optional[float] = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.descriptor.n,):
            raise CacheError(f"Reference holds {self.values.shape[0]} values, expected N={self.descriptor.n}")
        payload_sum = fnv1a_64(_payload(self.values))
        if self.checksum == 0:
            self.checksum = payload_sum
        elif self.checksum != payload_sum:
            raise CacheError(f"Reference checksum {self.checksum:016x} does not match payload {payload_sum:016x}")

    def nests(self, coarse: Grid) -> bool:
        return grid_nests(self.descriptor.n, coarse)


def grid_nests(fine_n: int, coarse: Grid) -> bool:
    """True if every node of `coarse` is also a node of the N=fine_n grid."""
    fine = fine_n + 1
    cells = coarse.n_interior + 1
    return cells <= fine and fine % cells == 0


def _payload(values: np.ndarray) -> bytes:
    return "".join(f"{v:.17g}\n" for v in values).encode("ascii")


def format_reference(ref: ReferenceSolution) -> str:
    d = ref.descriptor
    header = [
        f"version={ref.version}",
        f"scheme={d.scheme}",
        f"ic={d.ic}",
        f"amplitude={d.amplitude:.17g}",
        f"N={d.n}",
        f"dt={d.dt:.17g}",
        f"T={d.final_time:.17g}",
        f"checksum={ref.checksum:016x}",
    ]
    return "\n".join(header) + "\n\n" + _payload(ref.values).decode("ascii")


def parse_reference(text: str, validation_tol: float = DEFAULT_VALIDATION_TOL) -> ReferenceSolution:
    head, sep, body = text.partition("\n\n")
    if not sep:
        raise CacheError("Reference file has no blank line between header and values")

    fields: Dict[str, str] = {}
    for line in head.splitlines():
        key, eq, value = line.partition("=")
        if not eq:
            raise CacheError(f"Malformed header line: {line!r}")
        fields[key.strip()] = value.strip()
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise CacheError(f"Reference header lacks {', '.join(missing)}")

    try:
        version = int(fields["version"])
        descriptor = ReferenceDescriptor(
            ic=fields["ic"],
            amplitude=float(fields["amplitude"]),
            n=int(fields["N"]),
            dt=float(fields["dt"]),
            final_time=float(fields["T"]),
            scheme=fields["scheme"],
            validation_tol=validation_tol,
        )
        checksum = int(fields["checksum"], 16)
    except ValueError as e:
        raise CacheError(f"Unreadable reference header: {e}") from e
    if version != FORMAT_VERSION:
        raise CacheError(f"Unsupported reference format version {version} (expected {FORMAT_VERSION})")

    actual = fnv1a_64(body.encode("ascii"))
    if actual != checksum:
        raise CacheError(f"Checksum mismatch: header {checksum:016x}, payload {actual:016x}")
    try:
        values = np.array([float(line) for line in body.splitlines() if line], dtype=np.float64)
    except ValueError as e:
        raise CacheError(f"Unreadable reference value: {e}") from e
    return ReferenceSolution(descriptor=descriptor, values=values, checksum=checksum, version=version)


class ReferenceCache:
    """Directory of reference files, one per descriptor key."""

    def __init__(self, cache_dir):
        self.cache_dir = Path(cache_dir)

    def path_for(self, descriptor: ReferenceDescriptor) -> Path:
        digest = fnv1a_64(descriptor.key.encode("utf-8"))
        return self.cache_dir / f"ref-{descriptor.ic}-N{descriptor.n}-{digest:016x}.txt"

    def load(self, descriptor: ReferenceDescriptor) -> Optional[ReferenceSolution]:
        path = self.path_for(descriptor)
        if not path.exists():
            logger.info(f"Reference cache miss: {path.name}")
            return None
        try:
            text = path.read_text(encoding="ascii")
        except (OSError, UnicodeDecodeError) as e:
            raise CacheError(f"Could not read reference cache {path}: {e}") from e
        try:
            ref = parse_reference(text, validation_tol=descriptor.validation_tol)
        except CacheError as e:
            raise CacheError(f"{path}: {e}") from e
        if ref.descriptor.key != descriptor.key:
            raise CacheError(f"{path} holds {ref.descriptor.key}, expected {descriptor.key}")
        logger.info(f"Reference cache hit: {path.name}")
        return ref

    def store(self, ref: ReferenceSolution) -> Path:
        """Write through a temporary file and rename it into place."""
        path = self.path_for(ref.descriptor)
        tmp = path.with_suffix(path.suffix + f".{os.getpid()}.tmp")
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            with open(tmp, "w", encoding="ascii", newline="\n") as f:
                f.write(format_reference(ref))
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
        except OSError as e:
            tmp.unlink(missing_ok=True)
            raise CacheError(f"Could not write reference cache {path}: {e}") from e
        logger.info(f"Stored reference {ref.descriptor.key} at {path}")
        return path


def restrict(ref: ReferenceSolution, coarse: Grid) -> StateVector:
    """Nodal injection of the reference onto a nested coarse grid."""
    fine = ref.descriptor.n + 1
    cells = coarse.n_interior + 1
    if not ref.nests(coarse):
        raise GridError(
            f"Grid {coarse.tag} (h=1/{cells}) is not nested in the reference grid (h=1/{fine})"
        )
    factor = fine // cells
    indices = factor * np.arange(1, coarse.n_interior + 1) - 1
    return StateVector(ref.values[indices].copy(), coarse)
