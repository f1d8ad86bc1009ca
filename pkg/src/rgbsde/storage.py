"""Columnar binary files for forward and solution bundles.

Layout: an 8-byte magic, one kind byte (``F`` or ``S``), a header
``<dQQQQ16s`` holding ``(T, N, M, d, seed, tag)`` and then row-major
little-endian float64 arrays.  Forward files hold ``X``, the ``G``
increments and the Brownian increments; solution files hold ``Y``, ``Z``,
the ``K`` increments, ``S`` and ``xi`` after a ``<dd`` block with the
standard error of ``Y_0`` and the penalty index (NaN when absent).
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .backward_solver import SolutionBundle
from .errors import RGBSDEError
from .forward_sde import ForwardBundle
from .models import TimeGrid

__all__ = ["save_forward", "load_forward", "save_solution", "load_solution", "atomic_write_bytes"]

MAGIC = b"RGBSDE01"
HEADER = struct.Struct("<dQQQQ16s")
EXTRA = struct.Struct("<dd")
_F8 = np.dtype("<f8")


class BundleFormatError(RGBSDEError):
    pass


def atomic_write_bytes(path, chunks) -> None:
    """Write byte chunks to a temporary file next to ``path`` and rename it."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            for chunk in chunks:
                fh.write(chunk)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _tag(text: str) -> bytes:
    raw = text.encode("ascii")
    if len(raw) > 16:
        raise BundleFormatError(f"tag {text!r} longer than 16 bytes")
    return raw.ljust(16, b"\0")


def _arr(a) -> bytes:
    return np.ascontiguousarray(a, dtype=_F8).tobytes()


def save_forward(path, bundle: ForwardBundle) -> None:
    g = bundle.grid
    head = HEADER.pack(g.T, g.N, bundle.M, bundle.d, bundle.seed, _tag(bundle.scheme))
    tol = EXTRA.pack(bundle.tolerance, np.nan)
    atomic_write_bytes(
        path, [MAGIC, b"F", head, tol, _arr(bundle.X), _arr(bundle.G_increments), _arr(bundle.dW)]
    )


def _read(path, kind):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC or raw[8:9] != kind:
        raise BundleFormatError(f"{path} is not a {kind.decode()} bundle file")
    off = 9
    T, N, M, d, seed, tag = HEADER.unpack_from(raw, off)
    off += HEADER.size
    a, b = EXTRA.unpack_from(raw, off)
    off += EXTRA.size
    body = np.frombuffer(raw, dtype=_F8, offset=off)
    return (T, N, M, d, seed, tag.rstrip(b"\0").decode("ascii"), a, b), body


def _split(body, shapes):
    out = []
    pos = 0
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(body[pos : pos + size].reshape(shape).copy())
        pos += size
    if pos != body.size:
        raise BundleFormatError("payload size does not match the header")
    return out


def load_forward(path) -> ForwardBundle:
    (T, N, M, d, seed, tag, tol, _), body = _read(path, b"F")
    X, dG, dW = _split(body, [(M, N + 1, d), (M, N), (M, N, d)])
    return ForwardBundle(TimeGrid(T, N), X, dG, dW, int(seed), tag, tol)


def save_solution(path, sol: SolutionBundle) -> None:
    g = sol.grid
    M, d = sol.Z.shape[0], sol.Z.shape[2]
    head = HEADER.pack(g.T, g.N, M, d, sol.seed, _tag(sol.method))
    extra = EXTRA.pack(sol.Y0_se, np.nan if sol.penalty is None else sol.penalty)
    atomic_write_bytes(
        path,
        [MAGIC, b"S", head, extra, _arr(sol.Y), _arr(sol.Z), _arr(sol.K_increments), _arr(sol.S), _arr(sol.xi)],
    )


def load_solution(path) -> SolutionBundle:
    (T, N, M, d, seed, tag, se, pen), body = _read(path, b"S")
    Y, Z, dK, S, xi = _split(body, [(M, N + 1), (M, N, d), (M, N), (M, N + 1), (M,)])
    return SolutionBundle(
        TimeGrid(T, N), Y, Z, dK, tag, S, xi, int(seed), se, None if np.isnan(pen) else pen
    )
