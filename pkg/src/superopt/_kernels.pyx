# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled interpreter kernels; same API as ``_kernels_py``."""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport int64_t, uint64_t

cnp.import_array()

cdef extern from *:
    """
    #include <stdint.h>
    static inline uint64_t so_mulhu64(uint64_t a, uint64_t b) {
        return (uint64_t)(((unsigned __int128)a * b) >> 64);
    }
    static inline int so_pop(uint64_t a) { return __builtin_popcountll(a); }
    static inline int so_clz(uint64_t a, int bits) {
        return a == 0 ? bits : __builtin_clzll(a) - (64 - bits);
    }
    static inline int so_ctz(uint64_t a, int bits) {
        return a == 0 ? bits : __builtin_ctzll(a);
    }
    """
    uint64_t so_mulhu64(uint64_t a, uint64_t b) nogil
    int so_pop(uint64_t a) nogil
    int so_clz(uint64_t a, int bits) nogil
    int so_ctz(uint64_t a, int bits) nogil

cdef enum:
    FLAG_REG = 3

cdef uint64_t M32 = 0xFFFFFFFFULL


cdef inline void _run(const int64_t[:, ::1] code, uint64_t* r) noexcept nogil:
    cdef Py_ssize_t i, n = code.shape[0]
    cdef int64_t sem, kind, dst
    cdef uint64_t d, s, f, res
    cdef bint w32
    for i in range(n):
        sem = code[i, 0]
        if sem == 0:
            continue
        w32 = code[i, 1] != 0
        dst = code[i, 2]
        kind = code[i, 3]
        if kind == 1:
            s = r[code[i, 4]]
        elif kind == 2:
            s = <uint64_t>code[i, 4]
        else:
            s = 0
        d = r[dst]
        f = r[FLAG_REG]
        if w32:
            d &= M32
            s &= M32
            f &= M32
        if sem == 1:
            res = s
        elif sem == 2:
            res = d + s
        elif sem == 3:
            res = d - s
        elif sem == 4:
            res = d & s
        elif sem == 5:
            res = d | s
        elif sem == 6:
            res = d ^ s
        elif sem == 7:
            res = d * s
        elif sem == 8:
            res = (d * s) >> 32 if w32 else so_mulhu64(d, s)
        elif sem == 9:
            res = d << (s & (31 if w32 else 63))
        elif sem == 10:
            res = d >> (s & (31 if w32 else 63))
        elif sem == 11:
            if w32:
                res = <uint64_t>(<int64_t>(<int>(<unsigned int>d)) >> (s & 31))
            else:
                res = <uint64_t>((<int64_t>d) >> (s & 63))
        elif sem == 12:
            res = ~d
        elif sem == 13:
            res = 0 - d
        elif sem == 14:
            res = so_pop(s)
        elif sem == 15:
            res = so_clz(s, 32 if w32 else 64)
        elif sem == 16:
            res = so_ctz(s, 32 if w32 else 64)
        elif sem == 17:
            res = s if f == 0 else d
        elif sem == 18:
            res = s if f != 0 else d
        else:
            res = d
        if w32:
            res &= M32
        r[dst] = res


def _as_code(code):
    return np.ascontiguousarray(code, dtype=np.int64).reshape(-1, 5)


def _as_inputs(inputs):
    return np.ascontiguousarray(inputs, dtype=np.uint64).reshape(-1, 4)


def run_program(code, regs):
    cdef const int64_t[:, ::1] c = _as_code(code)
    cdef uint64_t r[4]
    cdef int k
    for k in range(4):
        r[k] = <uint64_t>(int(regs[k]) & 0xFFFFFFFFFFFFFFFF)
    _run(c, r)
    return [r[0], r[1], r[2], r[3]]


def suite_states(code, inputs):
    cdef const int64_t[:, ::1] c = _as_code(code)
    out = np.array(_as_inputs(inputs), dtype=np.uint64, copy=True)
    cdef uint64_t[:, ::1] st = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(st.shape[0]):
            _run(c, &st[i, 0])
    return out


def suite_outputs(code, inputs):
    cdef const int64_t[:, ::1] c = _as_code(code)
    cdef const uint64_t[:, ::1] inp = _as_inputs(inputs)
    out = np.empty(inp.shape[0], dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef uint64_t r[4]
    cdef Py_ssize_t i
    with nogil:
        for i in range(inp.shape[0]):
            r[0] = inp[i, 0]; r[1] = inp[i, 1]; r[2] = inp[i, 2]; r[3] = inp[i, 3]
            _run(c, r)
            o[i] = r[0]
    return out


def suite_hamming(code, inputs, expected):
    cdef const int64_t[:, ::1] c = _as_code(code)
    cdef const uint64_t[:, ::1] inp = _as_inputs(inputs)
    cdef const uint64_t[::1] exp = np.ascontiguousarray(expected, dtype=np.uint64)
    cdef uint64_t r[4]
    cdef Py_ssize_t i
    cdef long long total = 0
    with nogil:
        for i in range(inp.shape[0]):
            r[0] = inp[i, 0]; r[1] = inp[i, 1]; r[2] = inp[i, 2]; r[3] = inp[i, 3]
            _run(c, r)
            total += so_pop(r[0] ^ exp[i])
    return total
