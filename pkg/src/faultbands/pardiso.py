"""Minimal ctypes binding to the MKL PARDISO direct solver.

Used for SPD solves (mtype 2) and for dense Schur complements of symmetric
indefinite bordered systems (mtype -2, iparm(36) = 1).
"""

from __future__ import annotations

import ctypes
import ctypes.util
import glob
import os
import sys

import numpy as np
import scipy.sparse as sp

_LIB = None


def _candidates():
    env = os.environ.get("FAULTBANDS_MKL_RT") or os.environ.get("PYPARDISO_MKL_RT")
    if env:
        yield env
    found = ctypes.util.find_library("mkl_rt")
    if found:
        yield found
    for prefix in {sys.prefix, sys.base_prefix, "/usr/local", "/usr"}:
        yield from sorted(glob.glob(os.path.join(prefix, "lib", "libmkl_rt.so*")))
        yield from sorted(glob.glob(os.path.join(prefix, "Library", "bin", "mkl_rt*.dll")))


def _library():
    global _LIB
    if _LIB is None:
        errors = []
        for path in _candidates():
            try:
                lib = ctypes.CDLL(path)
                lib.pardiso.restype = None
                _LIB = lib
                break
            except OSError as exc:
                errors.append(f"{path}: {exc}")
        if _LIB is None:
            raise ImportError(
                "MKL runtime (libmkl_rt) not found; install the 'mkl' package or set FAULTBANDS_MKL_RT. "
                + "; ".join(errors)
            )
    return _LIB


_I32 = ctypes.POINTER(ctypes.c_int32)
_F64 = ctypes.POINTER(ctypes.c_double)


class PardisoError(RuntimeError):
    pass


class PardisoSolver:
    """Factor once (phase 12), then solve (phase 33) any number of times."""

    def __init__(self, A: sp.spmatrix, mtype: int = 2, schur_rows: np.ndarray | None = None):
        self.lib = _library()
        self.mtype = mtype
        A = sp.triu(sp.csr_matrix(A), format="csr")
        A.sum_duplicates()
        A.sort_indices()
        if np.any(A.diagonal() == 0) and mtype == 2:
            raise PardisoError("zero diagonal entry in SPD matrix")
        self.n = A.shape[0]
        self.data = np.ascontiguousarray(A.data, dtype=np.float64)
        self.ia = np.ascontiguousarray(A.indptr + 1, dtype=np.int32)
        self.ja = np.ascontiguousarray(A.indices + 1, dtype=np.int32)
        self.pt = np.zeros(64, dtype=np.int64)
        self.iparm = np.zeros(64, dtype=np.int32)
        self.iparm[0] = 1  # user settings
        self.iparm[1] = 2  # nested dissection ordering
        self.iparm[9] = 8  # pivot perturbation 1e-8
        self.iparm[10] = 0
        self.iparm[12] = 0
        self.iparm[34] = 0  # one-based indices
        self.perm = np.zeros(self.n, dtype=np.int32)
        self.schur = None
        b = np.zeros(1)
        x = np.zeros(1)
        if schur_rows is not None:
            self.perm = np.ascontiguousarray(schur_rows, dtype=np.int32)
            self.iparm[35] = 1
            ns = int(self.perm.sum())
            x = np.zeros(ns * ns)
        self._call(12, b, x, 1)
        if schur_rows is not None:
            self.schur = x.reshape(ns, ns)

    def _call(self, phase: int, b: np.ndarray, x: np.ndarray, nrhs: int) -> None:
        err = ctypes.c_int32(0)
        self.lib.pardiso(
            self.pt.ctypes.data_as(ctypes.POINTER(ctypes.c_int64)),
            ctypes.byref(ctypes.c_int32(1)),
            ctypes.byref(ctypes.c_int32(1)),
            ctypes.byref(ctypes.c_int32(self.mtype)),
            ctypes.byref(ctypes.c_int32(phase)),
            ctypes.byref(ctypes.c_int32(self.n)),
            self.data.ctypes.data_as(_F64),
            self.ia.ctypes.data_as(_I32),
            self.ja.ctypes.data_as(_I32),
            self.perm.ctypes.data_as(_I32),
            ctypes.byref(ctypes.c_int32(nrhs)),
            self.iparm.ctypes.data_as(_I32),
            ctypes.byref(ctypes.c_int32(0)),
            b.ctypes.data_as(_F64),
            x.ctypes.data_as(_F64),
            ctypes.byref(err),
        )
        if err.value != 0:
            raise PardisoError(f"PARDISO phase {phase} failed with error {err.value}")

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        vec = b.ndim == 1
        B = np.asfortranarray(b.reshape(self.n, -1))
        X = np.zeros_like(B, order="F")
        self._call(33, B, X, B.shape[1])
        return X.ravel() if vec else X

    def release(self) -> None:
        if self.pt.any():
            self._call(-1, np.zeros(1), np.zeros(1), 1)
            self.pt[:] = 0

    def __del__(self):
        try:
            self.release()
        except Exception:
            pass
