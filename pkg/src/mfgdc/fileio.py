"""Portable little-endian binary formats for fields and trajectories.

Field file:       magic b"MFG1" | u32 version=1 | u8 ndim | u64 shape per axis
                  | f64 payload, row-major.
Trajectory file:  magic b"MFGT" | u32 version=1 | u8 ndim | u64 shape per axis
                  | f64 T | u64 K+1 | u8 flags (bit0: u present, bit1: w
                  present) | K+1 density payloads | K+1 value payloads if bit0
                  | K momentum slices (dim components each) if bit1.

Momentum slices sit at half time nodes, hence K of them for K+1 density
slices.  All payloads are raw f64 blocks on the common grid.
"""

from __future__ import annotations

import struct

import numpy as np

from .core import ScalarField, TorusGrid, Trajectory, trajectory_from_arrays

FIELD_MAGIC = b"MFG1"
TRAJ_MAGIC = b"MFGT"
FORMAT_VERSION = 1
MAX_AXIS_POINTS = 1 << 24  # shapes beyond this are rejected as corrupt


class FormatError(Exception):
    """Base class for field/trajectory file format errors."""


class BadMagic(FormatError):
    pass


class VersionMismatch(FormatError):
    pass


class TruncatedPayload(FormatError):
    pass


class ShapeOverflow(FormatError):
    pass


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise TruncatedPayload(f"{self.path}: truncated payload")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def block(self, count: int) -> np.ndarray:
        raw = self.take(8 * count)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)

    def done(self):
        if self.off != len(self.data):
            raise FormatError(f"{self.path}: trailing bytes after payload")


def _read_shape(r: _Reader) -> tuple[int, ...]:
    ndim = r.u8()
    if ndim not in (1, 2):
        raise FormatError(f"{r.path}: unsupported ndim {ndim}")
    shape = tuple(r.u64() for _ in range(ndim))
    for s in shape:
        if s == 0 or s > MAX_AXIS_POINTS:
            raise ShapeOverflow(f"{r.path}: axis size {s} out of range")
    return shape


def _grid_for_shape(shape: tuple[int, ...]) -> TorusGrid:
    n = shape[0]
    if any(s != n for s in shape):
        raise FormatError("non-square grids are not supported")
    return TorusGrid(len(shape), n)


def write_field(f: ScalarField, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<B", f.grid.dim))
        for s in f.grid.shape:
            fh.write(struct.pack("<Q", s))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field(path: str) -> ScalarField:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    if r.take(4) != FIELD_MAGIC:
        raise BadMagic(f"{path}: bad magic")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: unsupported version {version}")
    shape = _read_shape(r)
    count = int(np.prod(shape))
    values = r.block(count).reshape(shape)
    r.done()
    return ScalarField(_grid_for_shape(shape), values)


def write_trajectory(traj: Trajectory, path: str) -> None:
    flags = (1 if traj.u is not None else 0) | (2 if traj.w is not None else 0)
    with open(path, "wb") as fh:
        fh.write(TRAJ_MAGIC)
        fh.write(struct.pack("<I", FORMAT_VERSION))
        fh.write(struct.pack("<B", traj.grid.dim))
        for s in traj.grid.shape:
            fh.write(struct.pack("<Q", s))
        fh.write(struct.pack("<d", traj.T))
        fh.write(struct.pack("<Q", traj.K + 1))
        fh.write(struct.pack("<B", flags))
        for s in traj.m:
            fh.write(np.ascontiguousarray(s.values, dtype="<f8").tobytes())
        if traj.u is not None:
            for s in traj.u:
                fh.write(np.ascontiguousarray(s.values, dtype="<f8").tobytes())
        if traj.w is not None:
            for v in traj.w:
                for a in v.arrays():
                    fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_trajectory(path: str) -> Trajectory:
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, path)
    if r.take(4) != TRAJ_MAGIC:
        raise BadMagic(f"{path}: bad magic")
    version = r.u32()
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: unsupported version {version}")
    shape = _read_shape(r)
    grid = _grid_for_shape(shape)
    T = r.f64()
    n_slices = r.u64()
    if n_slices < 3 or n_slices > MAX_AXIS_POINTS:
        raise ShapeOverflow(f"{path}: slice count {n_slices} out of range")
    flags = r.u8()
    count = grid.size
    K = n_slices - 1
    m = np.stack([r.block(count).reshape(shape) for _ in range(n_slices)])
    u = None
    if flags & 1:
        u = np.stack([r.block(count).reshape(shape) for _ in range(n_slices)])
    w = None
    if flags & 2:
        w = np.stack([
            np.stack([r.block(count).reshape(shape) for _ in range(grid.dim)])
            for _ in range(K)
        ])
    r.done()
    return trajectory_from_arrays(grid, T, m, u, w, check_mass=False)
