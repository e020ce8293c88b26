"""Branch-free exp/log for numba loops that LLVM can vectorize.

The libm calls behind ``math.exp``/``math.log1p`` block loop vectorization;
these polynomial versions use only arithmetic, rounding and bit casts.
Both are accurate to a few ulp on the ranges used by the likelihood kernel.
"""

from __future__ import annotations

import math

import numba
from llvmlite import ir
from numba import types
from numba.extending import intrinsic

LN2_HI = 6.93147180369123816490e-01
LN2_LO = 1.90821492927058770002e-10
LOG2E = 1.4426950408889634
SQRT2 = 1.4142135623730951
EXP_FLUSH = -700.0
EXP_MAX = 709.0


@intrinsic
def f64_as_i64(typingctx, x):
    sig = types.int64(types.float64)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], ir.IntType(64))

    return sig, codegen


@intrinsic
def i64_as_f64(typingctx, x):
    sig = types.float64(types.int64)

    def codegen(context, builder, signature, args):
        return builder.bitcast(args[0], ir.DoubleType())

    return sig, codegen


@numba.njit(inline="always")
def vexp(x):
    """exp(x), flushed to exactly 0 for x < -700.

    Flushing keeps sums of these terms out of the subnormal range, where
    x86 arithmetic falls back to slow microcode.
    """
    xc = min(max(x, EXP_FLUSH), EXP_MAX)
    k = math.floor(xc * LOG2E + 0.5)
    r = (xc - k * LN2_HI) - k * LN2_LO
    p = 1.0 / 6227020800.0
    p = p * r + 1.0 / 479001600.0
    p = p * r + 1.0 / 39916800.0
    p = p * r + 1.0 / 3628800.0
    p = p * r + 1.0 / 362880.0
    p = p * r + 1.0 / 40320.0
    p = p * r + 1.0 / 5040.0
    p = p * r + 1.0 / 720.0
    p = p * r + 1.0 / 120.0
    p = p * r + 1.0 / 24.0
    p = p * r + 1.0 / 6.0
    p = p * r + 0.5
    p = p * r + 1.0
    p = p * r + 1.0
    y = p * i64_as_f64((numba.int64(k) + 1023) << 52)
    return y if x >= EXP_FLUSH else 0.0


@numba.njit(inline="always")
def vlog1p(u):
    """log(1 + u) for finite u > -1.

    The rounding of 1 + u is not compensated, so the absolute error is about
    1e-16 rather than relative to u; callers scale it by at most ~1e3.
    """
    y = 1.0 + u
    bits = f64_as_i64(y)
    e = ((bits >> 52) & 0x7FF) - 1023
    m = i64_as_f64((bits & 0x000FFFFFFFFFFFFF) | 0x3FF0000000000000)
    big = m > SQRT2
    m = m * 0.5 if big else m
    e = e + 1 if big else e
    s = (m - 1.0) / (m + 1.0)
    s2 = s * s
    p = 1.0 / 23.0
    p = p * s2 + 1.0 / 21.0
    p = p * s2 + 1.0 / 19.0
    p = p * s2 + 1.0 / 17.0
    p = p * s2 + 1.0 / 15.0
    p = p * s2 + 1.0 / 13.0
    p = p * s2 + 1.0 / 11.0
    p = p * s2 + 1.0 / 9.0
    p = p * s2 + 1.0 / 7.0
    p = p * s2 + 1.0 / 5.0
    p = p * s2 + 1.0 / 3.0
    logm = 2.0 * s + 2.0 * s * s2 * p
    fe = numba.float64(e)
    return fe * LN2_HI + (logm + fe * LN2_LO)
