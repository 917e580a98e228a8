"""NFZ1 binary snapshot files.

Little-endian layout, normative:

    magic   4 bytes  b"NFZ1"
    M       u32      antennas per subarray
    L       u32      pulses
    K_t     u32      transmit subarrays
    K_r     u32      receive subarrays
    sigma   f64      per-sample noise variance
    body    K_t*K_r records of
              m      u16
              n      u16
              data   M*M*L complex samples as interleaved f64 (re, im)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .wavefield import SubarraySnapshot

MAGIC = b"NFZ1"
_HEADER = struct.Struct("<4sIIIId")
_RECORD_HEAD = struct.Struct("<HH")


class SnapshotFormatError(ValueError):
    pass


@dataclass(frozen=True)
class SnapshotFile:
    m_sub: int
    n_pulses: int
    k_t: int
    k_r: int
    sigma: float
    snapshots: dict[tuple[int, int], SubarraySnapshot]


def write_snapshots(path, snapshots: dict[tuple[int, int], SubarraySnapshot],
                    k_t: int, k_r: int, sigma: float) -> None:
    if len(snapshots) != k_t * k_r:
        raise SnapshotFormatError(
            f"expected {k_t * k_r} snapshots, got {len(snapshots)}"
        )
    first = next(iter(snapshots.values()))
    m_sub, n_pulses = first.m_sub, first.n_pulses
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, m_sub, n_pulses, k_t, k_r, sigma))
        for (m, n) in sorted(snapshots):
            snap = snapshots[(m, n)]
            if snap.m_sub != m_sub or snap.n_pulses != n_pulses:
                raise SnapshotFormatError("inconsistent snapshot dimensions")
            fh.write(_RECORD_HEAD.pack(m, n))
            interleaved = np.empty(2 * snap.data.size)
            interleaved[0::2] = snap.data.real
            interleaved[1::2] = snap.data.imag
            fh.write(interleaved.astype("<f8").tobytes())


def read_snapshots(path) -> SnapshotFile:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise SnapshotFormatError("truncated header")
        magic, m_sub, n_pulses, k_t, k_r, sigma = _HEADER.unpack(head)
        if magic != MAGIC:
            raise SnapshotFormatError(f"bad magic {magic!r}")
        n_samples = m_sub * m_sub * n_pulses
        snaps: dict[tuple[int, int], SubarraySnapshot] = {}
        for _ in range(k_t * k_r):
            rec = fh.read(_RECORD_HEAD.size)
            if len(rec) != _RECORD_HEAD.size:
                raise SnapshotFormatError("truncated record header")
            m, n = _RECORD_HEAD.unpack(rec)
            raw = fh.read(16 * n_samples)
            if len(raw) != 16 * n_samples:
                raise SnapshotFormatError("truncated record payload")
            interleaved = np.frombuffer(raw, dtype="<f8")
            data = interleaved[0::2] + 1j * interleaved[1::2]
            snaps[(m, n)] = SubarraySnapshot(
                m=m, n=n, m_sub=m_sub, n_pulses=n_pulses, data=data
            )
        if fh.read(1):
            raise SnapshotFormatError("trailing bytes after last record")
    return SnapshotFile(m_sub=m_sub, n_pulses=n_pulses, k_t=k_t, k_r=k_r,
                        sigma=sigma, snapshots=snaps)
