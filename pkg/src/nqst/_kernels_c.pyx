# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled tableau kernels; mirrors nqst._kernels_py exactly."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef unsigned long long u64
ctypedef unsigned char u8

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil
    int __builtin_ctzll(unsigned long long) nogil


def tableau_zero(int n):
    """Tableau of |0...0>: destabilizer X_i, stabilizer Z_i."""
    xs = np.zeros(2 * n, dtype=np.uint64)
    zs = np.zeros(2 * n, dtype=np.uint64)
    ph = np.zeros(2 * n, dtype=np.uint8)
    cdef u64[::1] xv = xs
    cdef u64[::1] zv = zs
    cdef int i
    for i in range(n):
        xv[i] = (<u64>1) << i
        zv[n + i] = (<u64>1) << i
    return xs, zs, ph


def apply_gates(u64[::1] xs, u64[::1] zs, u8[::1] ph, int n, long long[:, ::1] gates):
    """Apply an encoded gate list in place; rows are (op, a, b)."""
    cdef int m = gates.shape[0]
    cdef int gi, r, nrows = 2 * n
    cdef long long op, a, b
    cdef u64 mask, maskc, maskt, xq, zq, px, pz
    cdef int anti
    for gi in range(m):
        op = gates[gi, 0]
        a = gates[gi, 1]
        b = gates[gi, 2]
        if op == 0:
            mask = (<u64>1) << a
            for r in range(nrows):
                xq = xs[r] & mask
                zq = zs[r] & mask
                if xq and zq:
                    ph[r] = (ph[r] + 2) & 3
                if (xq != 0) != (zq != 0):
                    xs[r] ^= mask
                    zs[r] ^= mask
        elif op == 1:
            mask = (<u64>1) << a
            for r in range(nrows):
                if xs[r] & mask:
                    ph[r] = (ph[r] + 1) & 3
                    zs[r] ^= mask
        elif op == 2:
            maskc = (<u64>1) << a
            maskt = (<u64>1) << b
            for r in range(nrows):
                if xs[r] & maskc:
                    xs[r] ^= maskt
                if zs[r] & maskt:
                    zs[r] ^= maskc
        elif op == 3:
            px = <u64>a
            pz = <u64>b
            for r in range(nrows):
                anti = (__builtin_popcountll(xs[r] & pz)
                        + __builtin_popcountll(zs[r] & px)) & 1
                if anti:
                    ph[r] = (ph[r] + 2) & 3
        else:
            raise ValueError(f"unknown gate opcode {op}")


cdef inline void _rowmult(u64[::1] xs, u64[::1] zs, u8[::1] ph, int dst, int src):
    # row_dst <- row_dst * row_src with i^p X^x Z^z ordering
    cdef int extra = 2 * (__builtin_popcountll(zs[dst] & xs[src]) & 1)
    ph[dst] = <u8>((ph[dst] + ph[src] + extra) & 3)
    xs[dst] ^= xs[src]
    zs[dst] ^= zs[src]


def measure_one(u64[::1] xs, u64[::1] zs, u8[::1] ph, int n, int q, int rand_bit):
    """Measure Z on qubit q in place; returns (outcome, was_random)."""
    cdef u64 mask = (<u64>1) << q
    cdef int pivot = -1
    cdef int r, i, outcome
    cdef u64 acc_x, acc_z
    cdef int acc_p
    for r in range(n, 2 * n):
        if xs[r] & mask:
            pivot = r
            break
    if pivot >= 0:
        for r in range(2 * n):
            if r != pivot and (xs[r] & mask):
                _rowmult(xs, zs, ph, r, pivot)
        xs[pivot - n] = xs[pivot]
        zs[pivot - n] = zs[pivot]
        ph[pivot - n] = ph[pivot]
        outcome = rand_bit & 1
        xs[pivot] = 0
        zs[pivot] = mask
        ph[pivot] = <u8>(2 * outcome)
        return outcome, True
    acc_x = 0
    acc_z = 0
    acc_p = 0
    for i in range(n):
        if xs[i] & mask:
            acc_p = (acc_p + ph[n + i]
                     + 2 * (__builtin_popcountll(acc_z & xs[n + i]) & 1)) & 3
            acc_x ^= xs[n + i]
            acc_z ^= zs[n + i]
    return (1 if acc_p == 2 else 0), False


def measure_all(u64[::1] xs, u64[::1] zs, u8[::1] ph, int n, u8[::1] rand_bits):
    """Measure qubits 0..n-1 in order, in place; returns outcome bits."""
    out = np.zeros(n, dtype=np.uint8)
    cdef u8[::1] ov = out
    cdef int q, outcome
    for q in range(n):
        outcome, _ = measure_one(xs, zs, ph, n, q, rand_bits[q])
        ov[q] = <u8>outcome
    return out


def canonical_stab(u64[::1] xs, u64[::1] zs, u8[::1] ph, int n):
    """Row-reduced canonical form of the stabilizer block (unique per state)."""
    sx_arr = np.zeros(n, dtype=np.uint64)
    sz_arr = np.zeros(n, dtype=np.uint64)
    sp_arr = np.zeros(n, dtype=np.uint8)
    cdef u64[::1] sx = sx_arr
    cdef u64[::1] sz = sz_arr
    cdef u8[::1] sp = sp_arr
    cdef int r, col, src, pivot_row
    cdef u64 tx, tz, bitmask
    cdef u8 tp
    cdef int extra
    cdef bint isx
    for r in range(n):
        sx[r] = xs[n + r]
        sz[r] = zs[n + r]
        sp[r] = ph[n + r]
    pivot_row = 0
    for col in range(2 * n):
        isx = col < n
        bitmask = (<u64>1) << (col if isx else col - n)
        src = -1
        for r in range(pivot_row, n):
            if (sx[r] if isx else sz[r]) & bitmask:
                src = r
                break
        if src < 0:
            continue
        if src != pivot_row:
            tx = sx[src]; sx[src] = sx[pivot_row]; sx[pivot_row] = tx
            tz = sz[src]; sz[src] = sz[pivot_row]; sz[pivot_row] = tz
            tp = sp[src]; sp[src] = sp[pivot_row]; sp[pivot_row] = tp
        for r in range(n):
            if r != pivot_row and ((sx[r] if isx else sz[r]) & bitmask):
                extra = 2 * (__builtin_popcountll(sz[r] & sx[pivot_row]) & 1)
                sp[r] = <u8>((sp[r] + sp[pivot_row] + extra) & 3)
                sx[r] ^= sx[pivot_row]
                sz[r] ^= sz[pivot_row]
        pivot_row += 1
        if pivot_row == n:
            break
    return sx_arr, sz_arr, sp_arr


cdef inline int _product_phase(const u64* gx, const u64* gz, const u8* gp, u64 mask) nogil:
    # phase power of the product of the selected commuting rows
    cdef u64 x = 0, z = 0
    cdef int p = 0
    cdef int i
    while mask:
        i = __builtin_ctzll(mask)
        p = (p + gp[i] + 2 * (__builtin_popcountll(z & gx[i]) & 1)) & 3
        x ^= gx[i]
        z ^= gz[i]
        mask &= mask - 1
    return p


cdef double _abs2_single(const u64* ax, const u64* az, const u8* ap,
                         const u64* bx, const u64* bz, const u8* bp, int n) nogil:
    # |<a|b>|^2 from two independent stabilizer generating sets.
    cdef u64 basis_x[64]
    cdef u64 basis_z[64]
    cdef u64 basis_cu[64]
    cdef u64 basis_cv[64]
    cdef bint basis_used[64]
    cdef int src, col, dim = 0
    cdef u64 x, z, cu, cv
    cdef int pa, pb
    cdef bint stored
    for col in range(2 * n):
        basis_used[col] = False
    for src in range(2 * n):
        if src < n:
            x = ax[src]; z = az[src]
            cu = (<u64>1) << src; cv = 0
        else:
            x = bx[src - n]; z = bz[src - n]
            cu = 0; cv = (<u64>1) << (src - n)
        stored = False
        while x or z:
            if x:
                col = __builtin_ctzll(x)
            else:
                col = n + __builtin_ctzll(z)
            if not basis_used[col]:
                basis_x[col] = x
                basis_z[col] = z
                basis_cu[col] = cu
                basis_cv[col] = cv
                basis_used[col] = True
                stored = True
                break
            x ^= basis_x[col]
            z ^= basis_z[col]
            cu ^= basis_cu[col]
            cv ^= basis_cv[col]
        if not stored:
            pa = _product_phase(ax, az, ap, cu)
            pb = _product_phase(bx, bz, bp, cv)
            if (pa - pb) & 3:
                return 0.0
            dim += 1
    return 2.0 ** (dim - n)


def abs2_matrix(u64[:, ::1] axs, u64[:, ::1] azs, u8[:, ::1] aps,
                u64[:, ::1] bxs, u64[:, ::1] bzs, u8[:, ::1] bps, int n):
    """All-pairs |<a|b>|^2 between two batches of stabilizer generating sets."""
    cdef int A = axs.shape[0]
    cdef int B = bxs.shape[0]
    out = np.zeros((A, B), dtype=np.float64)
    cdef double[:, ::1] ov = out
    cdef int i, j
    with nogil:
        for i in range(A):
            for j in range(B):
                ov[i, j] = _abs2_single(&axs[i, 0], &azs[i, 0], &aps[i, 0],
                                        &bxs[j, 0], &bzs[j, 0], &bps[j, 0], n)
    return out


def pauli_expect_many(u64[:, ::1] sxs, u64[:, ::1] szs, u8[:, ::1] sps,
                      int n, object px_obj, object pz_obj, int pp):
    """<phi|P|phi> for each canonical stabilizer block; values in {0, +1, -1}."""
    cdef u64 px = <u64>px_obj
    cdef u64 pz = <u64>pz_obj
    cdef int S = sxs.shape[0]
    out = np.zeros(S, dtype=np.float64)
    cdef double[::1] ov = out
    cdef int s, r, col, d
    cdef int pivot_of[64]
    cdef u64 x, z, gx, gz
    cdef int gp
    cdef bint ok
    for s in range(S):
        for col in range(2 * n):
            pivot_of[col] = -1
        for r in range(n):
            if sxs[s, r] == 0 and szs[s, r] == 0:
                continue
            if sxs[s, r]:
                col = __builtin_ctzll(sxs[s, r])
            else:
                col = n + __builtin_ctzll(szs[s, r])
            pivot_of[col] = r
        x = px
        z = pz
        gx = 0
        gz = 0
        gp = 0
        ok = True
        while x or z:
            if x:
                col = __builtin_ctzll(x)
            else:
                col = n + __builtin_ctzll(z)
            r = pivot_of[col]
            if r < 0:
                ok = False
                break
            gp = (gp + sps[s, r] + 2 * (__builtin_popcountll(gz & sxs[s, r]) & 1)) & 3
            gx ^= sxs[s, r]
            gz ^= szs[s, r]
            x ^= sxs[s, r]
            z ^= szs[s, r]
        if not ok:
            ov[s] = 0.0
        else:
            d = (pp - gp) & 3
            ov[s] = 1.0 if d == 0 else -1.0
    return out
