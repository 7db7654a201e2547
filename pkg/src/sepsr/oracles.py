"""Oracle adapters: CSV grid datasets and external child processes.

A dataset oracle serves a black-box target from a CSV of pre-evaluated
points. The rows must form a full factorial grid (rectilinear axes); queries
are answered by multilinear interpolation, which reproduces separable
structure exactly on separable data. Scattered data is rejected.

An external oracle speaks a line protocol with a child process:

  parent -> child   one line per point, coordinates space-separated,
                    then a single '#' terminator line
  child  -> parent  one value per line (decimal float), then '#'

The child stays alive across batches; a malformed reply is a protocol error
and a silent child times out.
"""

from __future__ import annotations

import shlex
import subprocess
import threading
from queue import Empty, Queue

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import InputError, ProtocolError, UnsupportedLayoutError
from .sampling import DomainBox, SampleSet


def dataset_oracle(sample: SampleSet):
    """Build (oracle, box) from grid data; nan outside the data hull.

    The oracle interpolates multilinearly on the rectilinear grid spanned by
    the sample points. Raises UnsupportedLayoutError unless the points form a
    complete factorial grid.
    """
    if sample.values is None:
        raise InputError("dataset has no value column f")
    pts = sample.points
    n = sample.n_dims
    axes = [np.unique(pts[:, j]) for j in range(n)]
    sizes = [a.size for a in axes]
    if any(s < 2 for s in sizes):
        raise UnsupportedLayoutError(
            "each dataset axis needs at least 2 distinct values")
    if int(np.prod(sizes)) != sample.n_points:
        raise UnsupportedLayoutError(
            f"{sample.n_points} rows cannot fill a {'x'.join(map(str, sizes))} grid")
    grid = np.full(sizes, np.nan)
    filled = np.zeros(sizes, dtype=bool)
    idx = np.empty((sample.n_points, n), dtype=np.int64)
    for j in range(n):
        idx[:, j] = np.searchsorted(axes[j], pts[:, j])
    for row, value in zip(idx, sample.values):
        key = tuple(row)
        if filled[key]:
            raise UnsupportedLayoutError(f"duplicate grid point at index {key}")
        grid[key] = value
        filled[key] = True
    if not bool(filled.all()):
        raise UnsupportedLayoutError("dataset rows do not cover the full grid")
    interp = RegularGridInterpolator(axes, grid, method="linear",
                                     bounds_error=False, fill_value=np.nan)
    box = DomainBox(tuple(float(a[0]) for a in axes),
                    tuple(float(a[-1]) for a in axes))

    def oracle(query: np.ndarray) -> np.ndarray:
        return np.asarray(interp(np.atleast_2d(query)), dtype=float)

    return oracle, box


class ExternalOracle:
    """Child-process oracle speaking the line protocol; context manager."""

    def __init__(self, command: str, timeout: float = 60.0):
        self.command = command
        self.timeout = timeout
        try:
            self.proc = subprocess.Popen(
                shlex.split(command), stdin=subprocess.PIPE,
                stdout=subprocess.PIPE, stderr=subprocess.DEVNULL, text=True)
        except OSError as e:
            raise ProtocolError(f"cannot launch oracle command {command!r}: {e}")
        self._lines: Queue = Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        assert self.proc.stdout is not None
        for line in self.proc.stdout:
            self._lines.put(line.rstrip("\n"))
        self._lines.put(None)  # EOF marker

    def _next_line(self) -> str:
        try:
            line = self._lines.get(timeout=self.timeout)
        except Empty:
            raise ProtocolError(
                f"oracle child gave no reply within {self.timeout}s")
        if line is None:
            raise ProtocolError("oracle child closed its output stream")
        return line

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.proc.poll() is not None:
            raise ProtocolError(
                f"oracle child exited with code {self.proc.returncode}")
        payload = "\n".join(" ".join(repr(float(v)) for v in row) for row in pts)
        try:
            assert self.proc.stdin is not None
            self.proc.stdin.write(payload + "\n#\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise ProtocolError("oracle child closed its input stream")
        values = np.empty(pts.shape[0])
        for i in range(pts.shape[0]):
            line = self._next_line().strip()
            if line == "#":
                raise ProtocolError(
                    f"oracle replied with {i} values for {pts.shape[0]} points")
            try:
                values[i] = float(line)
            except ValueError:
                raise ProtocolError(f"non-numeric oracle reply {line!r}")
        terminator = self._next_line().strip()
        if terminator != "#":
            raise ProtocolError(f"expected '#' terminator, got {terminator!r}")
        return values

    def close(self):
        if self.proc.poll() is None:
            try:
                if self.proc.stdin is not None:
                    self.proc.stdin.close()
                self.proc.wait(timeout=5)
            except Exception:
                self.proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False
