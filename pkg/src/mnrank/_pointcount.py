"""Numba kernels for Frobenius traces of elliptic curves over prime fields.

Two arithmetic flavours are used:

* int64 scalar code with ``%`` reduction, valid for any p < 2**31 (products
  stay below 2**62).  Used for setup, the character-sum path and the exact
  fallback resolver.
* float64 lockstep code for the baby-step/giant-step sweep: every curve
  sharing a prime advances through the same sequence of group operations, so
  Montgomery batch inversion and instruction-level parallelism across curves
  apply.  Residues are integers held in doubles; exact while p < 2**26.

Curves over F_p (p >= 5) are handled in short form y^2 = x^3 + A x + B with
A = -27 c4, B = -54 c6.
"""
import numpy as np
from numba import njit

FLOAT_EXACT_LIMIT = 1 << 26
LIMB_BITS = 30

# Base-point abscissae start at floor(p / golden ratio): a fixed small integer
# would reduce the same global rational point at every prime, and torsion
# points over Q then have tiny order everywhere.
_GOLDEN = 0.6180339887498949

# error codes
OK = 0
E_SINGULAR_GOOD = 1  # p does not divide N but the model is singular mod p
E_SMOOTH_BAD = 2  # p divides N but the model reduces to a smooth curve
E_UNRESOLVED = 3  # BSGS could not isolate the group order


# ---------------------------------------------------------------- int64 helpers


@njit(cache=True)
def isqrt(n):
    r = np.int64(np.sqrt(np.float64(n)))
    while r * r > n:
        r -= 1
    while (r + 1) * (r + 1) <= n:
        r += 1
    return r


@njit(cache=True)
def powmod(b, e, p):
    r = np.int64(1)
    b = b % p
    while e > 0:
        if e & 1:
            r = (r * b) % p
        b = (b * b) % p
        e >>= 1
    return r


@njit(cache=True)
def legendre(a, p):
    a = a % p
    if a == 0:
        return 0
    return 1 if powmod(a, (p - 1) // 2, p) == 1 else -1


@njit(cache=True)
def reduce_limbs(limbs, sign, p):
    """Residue mod p of the integer ``sign * sum(limbs[j] << 30j)``."""
    r = np.int64(0)
    for j in range(limbs.shape[0] - 1, -1, -1):
        r = ((r << LIMB_BITS) + limbs[j]) % p
    if sign < 0 and r != 0:
        r = p - r
    return r


@njit(cache=True)
def count_affine_small(p, a1, a2, a3, a4, a6):
    """Affine points of the full Weierstrass equation, by enumerating all pairs."""
    c = 0
    for x in range(p):
        for y in range(p):
            lhs = y * y + a1 * x * y + a3 * y
            rhs = x * x * x + a2 * x * x + a4 * x + a6
            if (lhs - rhs) % p == 0:
                c += 1
    return c


@njit(cache=True)
def quadratic_character_table(p):
    chi = np.full(p, -1, dtype=np.int8)
    chi[0] = 0
    for y in range(1, (p + 1) // 2):
        chi[(y * y) % p] = 1
    return chi


@njit(cache=True)
def charsum_trace(p, A, B, chi):
    """-sum_x chi(x^3 + A x + B), stepping the cubic with finite differences."""
    f = B % p
    d1 = (1 + A) % p
    d2 = np.int64(6 % p)
    d3 = d2
    s = np.int64(0)
    for _ in range(p):
        s += chi[f]
        f += d1
        if f >= p:
            f -= p
        d1 += d2
        if d1 >= p:
            d1 -= p
        d2 += d3
        if d2 >= p:
            d2 -= p
    return -s


# ---------------------------------------------------- exact affine (resolver)


@njit(cache=True)
def _aff_add(x1, y1, i1, x2, y2, i2, A, p):
    if i1:
        return x2, y2, i2
    if i2:
        return x1, y1, i1
    if x1 == x2:
        if (y1 + y2) % p == 0:
            return np.int64(0), np.int64(0), True
        num = (3 * ((x1 * x1) % p) + A) % p
        den = (2 * y1) % p
    else:
        num = (y2 - y1) % p
        den = (x2 - x1) % p
    lam = (num * powmod(den, p - 2, p)) % p
    x3 = ((lam * lam) % p - x1 - x2) % p
    y3 = ((lam * ((x1 - x3) % p)) % p - y1) % p
    return x3, y3, False


@njit(cache=True)
def _aff_mul(k, x, y, A, p):
    rx, ry, ri = np.int64(0), np.int64(0), True
    bx, by, bi = x, y, False
    while k > 0:
        if k & 1:
            rx, ry, ri = _aff_add(rx, ry, ri, bx, by, bi, A, p)
        bx, by, bi = _aff_add(bx, by, bi, bx, by, bi, A, p)
        k >>= 1
    return rx, ry, ri


@njit(cache=True)
def _candidate_traces(x, y, A, p, T):
    """Every t in [-T, T] with (p + 1 - t) * P = O, for P = (x, y) on y^2 = x^3 + A x + B."""
    m = isqrt(T) + 1
    s = 2 * m + 1
    bx = np.empty(m + 1, np.int64)
    by = np.empty(m + 1, np.int64)
    binf = np.zeros(m + 1, np.bool_)
    cx, cy, ci = np.int64(0), np.int64(0), True
    for j in range(m + 1):
        bx[j] = cx
        by[j] = cy
        binf[j] = ci
        cx, cy, ci = _aff_add(cx, cy, ci, x, y, False, A, p)
    keys = np.where(binf, np.int64(-1), bx)
    order = np.argsort(keys, kind="mergesort")
    skeys = keys[order]
    Sx, Sy, Si = _aff_mul(s, x, y, A, p)
    K = (T + m) // s + 1
    Rx, Ry, Ri = _aff_mul(p + 1 + K * s, x, y, A, p)
    nSy = (p - Sy) % p
    found = np.zeros(2 * T + 1, np.bool_)
    for k in range(-K, K + 1):
        key = np.int64(-1) if Ri else Rx
        lo = np.searchsorted(skeys, key)
        for idx in range(lo, m + 1):
            if skeys[idx] != key:
                break
            j = order[idx]
            if Ri:
                # R = O = jP = -jP
                cand = k * s + j
                if -T <= cand <= T:
                    found[cand + T] = True
                cand = k * s - j
                if -T <= cand <= T:
                    found[cand + T] = True
                continue
            if by[j] == Ry:
                cand = k * s + j
                if -T <= cand <= T:
                    found[cand + T] = True
            if (by[j] + Ry) % p == 0:
                cand = k * s - j
                if -T <= cand <= T:
                    found[cand + T] = True
        Rx, Ry, Ri = _aff_add(Rx, Ry, Ri, Sx, nSy, Si, A, p)
    return np.flatnonzero(found) - T


@njit(cache=True)
def resolve_trace(p, A, B, max_points=256):
    """Exact trace via Mestre's alternation between the curve and its quadratic twist.

    Returns ``(trace, ok)``; ``ok`` is False if the candidate set never
    collapsed to a single value (possible only for very small p).
    """
    T = isqrt(4 * p)
    alive = np.ones(2 * T + 1, np.bool_)
    step = np.int64(p * _GOLDEN) % p
    if step == 0:
        step = 1
    x0 = np.int64(0)
    used = 0
    for _ in range(p):
        if used >= max_points:
            break
        x0 = (x0 + step) % p
        d = ((((x0 * x0) % p) * x0) % p + (A * x0) % p + B) % p
        if d == 0:
            continue
        used += 1
        chi = legendre(d, p)
        d2 = (d * d) % p
        ts = _candidate_traces((d * x0) % p, d2, (A * d2) % p, p, T)
        mask = np.zeros(2 * T + 1, np.bool_)
        for t in ts:
            mask[chi * t + T] = True
        n_alive = 0
        last = 0
        for i in range(2 * T + 1):
            alive[i] = alive[i] and mask[i]
            if alive[i]:
                n_alive += 1
                last = i - T
        if n_alive == 1:
            return last, True
        if n_alive == 0:
            return 0, False
    return 0, False


# ------------------------------------------------------- float lockstep sweep


@njit(cache=True, inline="always")
def _fm(a, b, p, pinv):
    prod = a * b
    r = prod - np.floor(prod * pinv) * p
    if r < 0.0:
        r += p
    if r >= p:
        r -= p
    return r


@njit(cache=True, inline="always")
def _fa(a, b, p):
    c = a + b
    if c >= p:
        c -= p
    return c


@njit(cache=True, inline="always")
def _fs(a, b, p):
    c = a - b
    if c < 0.0:
        c += p
    return c


@njit(cache=True)
def _fpow(b, e, p, pinv):
    r = 1.0
    while e > 0:
        if e & 1:
            r = _fm(r, b, p, pinv)
        b = _fm(b, b, p, pinv)
        e >>= 1
    return r


@njit(cache=True, inline="always")
def _jdbl(X, Y, Z, a, p, pinv):
    if Z == 0.0 or Y == 0.0:
        return 1.0, 1.0, 0.0
    XX = _fm(X, X, p, pinv)
    YY = _fm(Y, Y, p, pinv)
    YYYY = _fm(YY, YY, p, pinv)
    ZZ = _fm(Z, Z, p, pinv)
    S = _fm(X, YY, p, pinv)
    S = _fa(S, S, p)
    S = _fa(S, S, p)
    M = _fa(_fa(_fa(XX, XX, p), XX, p), _fm(a, _fm(ZZ, ZZ, p, pinv), p, pinv), p)
    X3 = _fs(_fm(M, M, p, pinv), _fa(S, S, p), p)
    Y8 = _fa(YYYY, YYYY, p)
    Y8 = _fa(Y8, Y8, p)
    Y8 = _fa(Y8, Y8, p)
    Y3 = _fs(_fm(M, _fs(S, X3, p), p, pinv), Y8, p)
    Z3 = _fm(_fa(Y, Y, p), Z, p, pinv)
    return X3, Y3, Z3


@njit(cache=True, inline="always")
def _jmadd(X, Y, Z, x2, y2, a, p, pinv):
    if Z == 0.0:
        return x2, y2, 1.0
    ZZ = _fm(Z, Z, p, pinv)
    U2 = _fm(x2, ZZ, p, pinv)
    S2 = _fm(y2, _fm(Z, ZZ, p, pinv), p, pinv)
    H = _fs(U2, X, p)
    r = _fs(S2, Y, p)
    if H == 0.0:
        if r == 0.0:
            return _jdbl(X, Y, Z, a, p, pinv)
        return 1.0, 1.0, 0.0
    HH = _fm(H, H, p, pinv)
    HHH = _fm(H, HH, p, pinv)
    V = _fm(X, HH, p, pinv)
    X3 = _fs(_fs(_fm(r, r, p, pinv), HHH, p), _fa(V, V, p), p)
    Y3 = _fs(_fm(r, _fs(V, X3, p), p, pinv), _fm(Y, HHH, p, pinv), p)
    Z3 = _fm(Z, H, p, pinv)
    return X3, Y3, Z3


@njit(cache=True)
def _normalize(X, Y, Z, xo, yo, p, pinv):
    """Affine coordinates of a (rows x lanes) block with one field inversion.

    Points at infinity get x = -1.
    """
    rows, n = X.shape
    pref = np.empty((rows, n))
    acc = np.ones(n)
    for i in range(rows):
        for l in range(n):
            pref[i, l] = acc[l]
            if Z[i, l] != 0.0:
                acc[l] = _fm(acc[l], Z[i, l], p, pinv)
    lane_pref = np.empty(n)
    tot = 1.0
    for l in range(n):
        lane_pref[l] = tot
        tot = _fm(tot, acc[l], p, pinv)
    ti = _fpow(tot, np.int64(p) - 2, p, pinv)
    inv = np.empty(n)
    for l in range(n - 1, -1, -1):
        inv[l] = _fm(ti, lane_pref[l], p, pinv)
        ti = _fm(ti, acc[l], p, pinv)
    for i in range(rows - 1, -1, -1):
        for l in range(n):
            z = Z[i, l]
            if z == 0.0:
                xo[i, l] = -1.0
                yo[i, l] = 0.0
                continue
            zi = _fm(inv[l], pref[i, l], p, pinv)
            inv[l] = _fm(inv[l], z, p, pinv)
            zi2 = _fm(zi, zi, p, pinv)
            xo[i, l] = _fm(X[i, l], zi2, p, pinv)
            yo[i, l] = _fm(Y[i, l], _fm(zi2, zi, p, pinv), p, pinv)


@njit(cache=True)
def bsgs_lanes(p, A, B, out, ok):
    """Frobenius traces at one prime for many short-form curves at once.

    ``A``/``B`` hold the coefficients mod p, one lane per curve.  Lanes whose
    base point has small order, or whose sweep leaves more than one candidate,
    get ``ok = False`` and must be settled by :func:`resolve_trace`.
    """
    n = A.shape[0]
    if n == 0:
        return
    pf = np.float64(p)
    pinv = 1.0 / pf
    T = isqrt(4 * p)
    m = isqrt(T) + 1
    s = 2 * m + 1
    K = (T + m) // s + 1
    ng = 2 * K + 1

    # base point on the twist y^2 = x^3 + A d^2 x + B d^3 by d = f(x0)
    px = np.empty(n)
    py = np.empty(n)
    pa = np.empty(n)
    dd = np.empty(n)
    for l in range(n):
        a = A[l]
        b = B[l]
        x0 = np.int64(p * _GOLDEN) % p
        while True:
            d = ((((x0 * x0) % p) * x0) % p + (a * x0) % p + b) % p
            if d != 0:
                break
            x0 = (x0 + 1) % p
        d2 = (d * d) % p
        px[l] = np.float64((d * x0) % p)
        py[l] = np.float64(d2)
        pa[l] = np.float64((a * d2) % p)
        dd[l] = np.float64(d)
    # Euler criterion for every lane, bits outermost
    chi = np.ones(n)
    e = (np.int64(p) - 1) // 2
    base = dd.copy()
    while e > 0:
        if e & 1:
            for l in range(n):
                chi[l] = _fm(chi[l], base[l], pf, pinv)
        for l in range(n):
            base[l] = _fm(base[l], base[l], pf, pinv)
        e >>= 1

    # baby steps j*P for j = 1..m, plus S = (2m+1) P in the last row
    BX = np.empty((m + 1, n))
    BY = np.empty((m + 1, n))
    BZ = np.empty((m + 1, n))
    for l in range(n):
        BX[0, l] = px[l]
        BY[0, l] = py[l]
        BZ[0, l] = 1.0
    for j in range(1, m):
        for l in range(n):
            BX[j, l], BY[j, l], BZ[j, l] = _jmadd(
                BX[j - 1, l], BY[j - 1, l], BZ[j - 1, l], px[l], py[l], pa[l], pf, pinv
            )
    for l in range(n):
        X, Y, Z = _jdbl(BX[m - 1, l], BY[m - 1, l], BZ[m - 1, l], pa[l], pf, pinv)
        BX[m, l], BY[m, l], BZ[m, l] = _jmadd(X, Y, Z, px[l], py[l], pa[l], pf, pinv)
    bx = np.empty((m + 1, n))
    by = np.empty((m + 1, n))
    _normalize(BX, BY, BZ, bx, by, pf, pinv)

    # giant steps R_k = (p + 1 - k s) P for k = -K..K
    e = np.int64(p) + 1 + K * s
    nbits = 0
    t = e
    while t > 0:
        nbits += 1
        t >>= 1
    GX = np.empty((ng, n))
    GY = np.empty((ng, n))
    GZ = np.empty((ng, n))
    for l in range(n):
        GX[0, l] = px[l]
        GY[0, l] = py[l]
        GZ[0, l] = 1.0
    for i in range(nbits - 2, -1, -1):
        bit = (e >> i) & 1
        for l in range(n):
            X, Y, Z = _jdbl(GX[0, l], GY[0, l], GZ[0, l], pa[l], pf, pinv)
            if bit:
                X, Y, Z = _jmadd(X, Y, Z, px[l], py[l], pa[l], pf, pinv)
            GX[0, l] = X
            GY[0, l] = Y
            GZ[0, l] = Z
    for i in range(1, ng):
        for l in range(n):
            Sx = bx[m, l]
            if Sx < 0.0:
                GX[i, l] = GX[i - 1, l]
                GY[i, l] = GY[i - 1, l]
                GZ[i, l] = GZ[i - 1, l]
                continue
            GX[i, l], GY[i, l], GZ[i, l] = _jmadd(
                GX[i - 1, l], GY[i - 1, l], GZ[i - 1, l], Sx, _fs(0.0, by[m, l], pf),
                pa[l], pf, pinv,
            )
    gx = np.empty((ng, n))
    gy = np.empty((ng, n))
    _normalize(GX, GY, GZ, gx, gy, pf, pinv)

    # match giant x-coordinates against the baby table, lane by lane
    tsize = 16
    while tsize < 4 * m:
        tsize <<= 1
    mask = tsize - 1
    hkey = np.empty(tsize, np.int64)
    hval = np.empty(tsize, np.int64)
    for l in range(n):
        good = bx[m, l] >= 0.0
        hkey[:] = -1
        for j in range(m):
            if not good:
                break
            xk = np.int64(bx[j, l])
            if xk < 0:
                good = False
                break
            h = (xk * 2654435761) & mask
            while hkey[h] != -1:
                if hkey[h] == xk:
                    good = False
                    break
                h = (h + 1) & mask
            if not good:
                break
            hkey[h] = xk
            hval[h] = j
        if not good:
            ok[l] = False
            continue
        cnt = 0
        res = 0
        for i in range(ng):
            k = i - K
            xk = np.int64(gx[i, l])
            if xk < 0:
                cand = k * s
                if -T <= cand <= T:
                    cnt += 1
                    res = cand
                continue
            h = (xk * 2654435761) & mask
            while hkey[h] != -1:
                if hkey[h] == xk:
                    j = hval[h]
                    if by[j, l] == gy[i, l]:
                        cand = k * s + (j + 1)
                    else:
                        cand = k * s - (j + 1)
                    if -T <= cand <= T:
                        cnt += 1
                        res = cand
                    break
                h = (h + 1) & mask
        if cnt == 1:
            ok[l] = True
            out[l] = res if chi[l] == 1.0 else -res
        else:
            ok[l] = False


# ------------------------------------------------------------ batch driver


@njit(cache=True)
def _short_form(p, lim, sg, c):
    c4 = reduce_limbs(lim[c, 5], sg[c, 5], p)
    c6 = reduce_limbs(lim[c, 6], sg[c, 6], p)
    A = (p - (27 * c4) % p) % p
    B = (p - (54 * c6) % p) % p
    return c4, c6, A, B


@njit(cache=True)
def trace_matrix(primes, lim, sg, conductors, chi_flat, chi_off, chi_count, threshold, out, err, err_p):
    """Frobenius traces for a batch of curves at every prime in ``primes``.

    ``lim``/``sg`` hold base-2**30 limbs and signs of the eight integers
    (a1, a2, a3, a4, a6, c4, c6, disc) per curve.  ``chi_flat`` concatenates
    quadratic-character tables for the first ``chi_count`` primes.  The
    first failure per curve is reported through ``err``/``err_p``.
    """
    n = lim.shape[0]
    lane_idx = np.empty(n, np.int64)
    lane_A = np.empty(n, np.int64)
    lane_B = np.empty(n, np.int64)
    lane_out = np.empty(n, np.int64)
    lane_ok = np.empty(n, np.bool_)
    for k in range(primes.shape[0]):
        p = primes[k]
        nl = 0
        for c in range(n):
            if err[c] != OK:
                continue
            bad = conductors[c] % p == 0
            disc = reduce_limbs(lim[c, 7], sg[c, 7], p)
            if bad and disc != 0:
                err[c] = E_SMOOTH_BAD
                err_p[c] = p
                continue
            if not bad and disc == 0:
                err[c] = E_SINGULAR_GOOD
                err_p[c] = p
                continue
            if p <= 3:
                a1 = reduce_limbs(lim[c, 0], sg[c, 0], p)
                a2 = reduce_limbs(lim[c, 1], sg[c, 1], p)
                a3 = reduce_limbs(lim[c, 2], sg[c, 2], p)
                a4 = reduce_limbs(lim[c, 3], sg[c, 3], p)
                a6 = reduce_limbs(lim[c, 4], sg[c, 4], p)
                out[c, k] = p - count_affine_small(p, a1, a2, a3, a4, a6)
                continue
            c4, c6, A, B = _short_form(p, lim, sg, c)
            if bad:
                # additive: 0; multiplicative: split iff -c6 is a square
                out[c, k] = 0 if c4 == 0 else legendre(p - c6, p)
            elif k < chi_count and p < threshold:
                o = chi_off[k]
                out[c, k] = charsum_trace(p, A, B, chi_flat[o : o + p])
            else:
                lane_idx[nl] = c
                lane_A[nl] = A
                lane_B[nl] = B
                nl += 1
        if nl == 0:
            continue
        if p < FLOAT_EXACT_LIMIT:
            bsgs_lanes(p, lane_A[:nl], lane_B[:nl], lane_out[:nl], lane_ok[:nl])
        else:
            lane_ok[:nl] = False
        for i in range(nl):
            c = lane_idx[i]
            if lane_ok[i]:
                out[c, k] = lane_out[i]
                continue
            t, good = resolve_trace(p, lane_A[i], lane_B[i])
            if good:
                out[c, k] = t
            else:
                err[c] = E_UNRESOLVED
                err_p[c] = p


@njit(cache=True)
def build_character_tables(primes):
    total = 0
    for p in primes:
        total += p
    flat = np.empty(total, np.int8)
    off = np.empty(primes.shape[0], np.int64)
    o = 0
    for i in range(primes.shape[0]):
        p = primes[i]
        off[i] = o
        flat[o : o + p] = quadratic_character_table(p)
        o += p
    return flat, off
