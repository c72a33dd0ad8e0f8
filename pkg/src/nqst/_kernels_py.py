"""Pure-numpy tableau kernels.

Reference implementation of the low-level stabilizer kernels; the compiled
module ``nqst._kernels_c`` mirrors these signatures exactly.  A tableau over n
qubits is three arrays of length 2n: ``xs``/``zs`` hold bit-packed X/Z parts
(bit q of ``xs[r]`` is the X component of row r on qubit q) and ``ph`` holds
the power p in row = i^p * X^x * Z^z, p in {0,1,2,3}.  Rows 0..n-1 are
destabilizers, rows n..2n-1 stabilizers.
"""

import numpy as np

U64_ONE = np.uint64(1)


def tableau_zero(n):
    """Tableau of |0...0>: destabilizer X_i, stabilizer Z_i."""
    xs = np.zeros(2 * n, dtype=np.uint64)
    zs = np.zeros(2 * n, dtype=np.uint64)
    ph = np.zeros(2 * n, dtype=np.uint8)
    for i in range(n):
        xs[i] = U64_ONE << np.uint64(i)
        zs[n + i] = U64_ONE << np.uint64(i)
    return xs, zs, ph


def apply_gates(xs, zs, ph, n, gates):
    """Apply an encoded gate list in place.

    gates is an int64 array of shape (m, 3); rows are one of
    (0, q, 0) H, (1, q, 0) S, (2, c, t) CNOT, (3, xmask, zmask) Pauli.
    """
    for gi in range(gates.shape[0]):
        op = int(gates[gi, 0])
        a = int(gates[gi, 1])
        b = int(gates[gi, 2])
        if op == 0:
            q = np.uint64(a)
            xq = (xs >> q) & U64_ONE
            zq = (zs >> q) & U64_ONE
            ph += 2 * ((xq & zq).astype(np.uint8))
            ph &= 3
            flip = (xq ^ zq) << q
            xs ^= flip
            zs ^= flip
        elif op == 1:
            q = np.uint64(a)
            xq = (xs >> q) & U64_ONE
            ph += xq.astype(np.uint8)
            ph &= 3
            zs ^= xq << q
        elif op == 2:
            c = np.uint64(a)
            t = np.uint64(b)
            xs ^= ((xs >> c) & U64_ONE) << t
            zs ^= ((zs >> t) & U64_ONE) << c
        elif op == 3:
            px = np.uint64(a)
            pz = np.uint64(b)
            anti = (np.bitwise_count(xs & pz) + np.bitwise_count(zs & px)) & U64_ONE
            ph += 2 * anti.astype(np.uint8)
            ph &= 3
        else:
            raise ValueError(f"unknown gate opcode {op}")


def _rowmult_into(xs, zs, ph, dst, src):
    # row_dst <- row_dst * row_src with i^p X^x Z^z ordering
    extra = 2 * (int(zs[dst] & xs[src]).bit_count() & 1)
    ph[dst] = (int(ph[dst]) + int(ph[src]) + extra) & 3
    xs[dst] ^= xs[src]
    zs[dst] ^= zs[src]


def measure_one(xs, zs, ph, n, q, rand_bit):
    """Measure Z on qubit q in place; returns (outcome, was_random)."""
    mask = U64_ONE << np.uint64(q)
    pivot = -1
    for r in range(n, 2 * n):
        if xs[r] & mask:
            pivot = r
            break
    if pivot >= 0:
        for r in range(2 * n):
            if r != pivot and (xs[r] & mask):
                _rowmult_into(xs, zs, ph, r, pivot)
        xs[pivot - n] = xs[pivot]
        zs[pivot - n] = zs[pivot]
        ph[pivot - n] = ph[pivot]
        outcome = int(rand_bit) & 1
        xs[pivot] = np.uint64(0)
        zs[pivot] = mask
        ph[pivot] = np.uint8(2 * outcome)
        return outcome, True
    acc_x = 0
    acc_z = 0
    acc_p = 0
    for i in range(n):
        if xs[i] & mask:
            acc_p = (acc_p + int(ph[n + i]) + 2 * ((acc_z & int(xs[n + i])).bit_count() & 1)) & 3
            acc_x ^= int(xs[n + i])
            acc_z ^= int(zs[n + i])
    return (1 if acc_p == 2 else 0), False


def measure_all(xs, zs, ph, n, rand_bits):
    """Measure qubits 0..n-1 in order, in place; returns outcome bits."""
    out = np.zeros(n, dtype=np.uint8)
    for q in range(n):
        outcome, _ = measure_one(xs, zs, ph, n, q, int(rand_bits[q]))
        out[q] = outcome
    return out


def canonical_stab(xs, zs, ph, n):
    """Row-reduced canonical form of the stabilizer block (unique per state)."""
    sx = [int(v) for v in xs[n:2 * n]]
    sz = [int(v) for v in zs[n:2 * n]]
    sp = [int(v) for v in ph[n:2 * n]]
    nrows = n
    pivot_row = 0
    for col in range(2 * n):
        if col < n:
            def bit(r, c=col):
                return (sx[r] >> c) & 1
        else:
            def bit(r, c=col - n):
                return (sz[r] >> c) & 1
        src = -1
        for r in range(pivot_row, nrows):
            if bit(r):
                src = r
                break
        if src < 0:
            continue
        if src != pivot_row:
            sx[src], sx[pivot_row] = sx[pivot_row], sx[src]
            sz[src], sz[pivot_row] = sz[pivot_row], sz[src]
            sp[src], sp[pivot_row] = sp[pivot_row], sp[src]
        for r in range(nrows):
            if r != pivot_row and bit(r):
                extra = 2 * ((sz[r] & sx[pivot_row]).bit_count() & 1)
                sp[r] = (sp[r] + sp[pivot_row] + extra) & 3
                sx[r] ^= sx[pivot_row]
                sz[r] ^= sz[pivot_row]
        pivot_row += 1
        if pivot_row == nrows:
            break
    return (
        np.array(sx, dtype=np.uint64),
        np.array(sz, dtype=np.uint64),
        np.array(sp, dtype=np.uint8),
    )


def _abs2_single(ax, az, ap, bx, bz, bp, n):
    # |<a|b>|^2 from two independent stabilizer generating sets.
    # Stack all 2n generators; every F2 dependency u.A = v.B gives one element
    # of the group intersection, where the A- and B-side signs must agree.
    basis_x = [0] * (2 * n)
    basis_z = [0] * (2 * n)
    basis_cu = [0] * (2 * n)
    basis_cv = [0] * (2 * n)
    basis_used = [False] * (2 * n)
    dim = 0
    for src in range(2 * n):
        if src < n:
            x, z = ax[src], az[src]
            cu, cv = 1 << src, 0
        else:
            x, z = bx[src - n], bz[src - n]
            cu, cv = 0, 1 << (src - n)
        while x or z:
            if x:
                col = (x & -x).bit_length() - 1
            else:
                col = n + (z & -z).bit_length() - 1
            if not basis_used[col]:
                basis_x[col] = x
                basis_z[col] = z
                basis_cu[col] = cu
                basis_cv[col] = cv
                basis_used[col] = True
                break
            x ^= basis_x[col]
            z ^= basis_z[col]
            cu ^= basis_cu[col]
            cv ^= basis_cv[col]
        else:
            pa = _product_phase(ax, az, ap, cu)
            pb = _product_phase(bx, bz, bp, cv)
            if (pa - pb) & 3:
                return 0.0
            dim += 1
    return 2.0 ** (dim - n)


def _product_phase(gx, gz, gp, mask):
    # phase power of the product of the selected commuting rows
    x = 0
    z = 0
    p = 0
    i = 0
    while mask:
        if mask & 1:
            p = (p + gp[i] + 2 * ((z & gx[i]).bit_count() & 1)) & 3
            x ^= gx[i]
            z ^= gz[i]
        mask >>= 1
        i += 1
    return p


def abs2_matrix(axs, azs, aps, bxs, bzs, bps, n):
    """All-pairs |<a|b>|^2 between two batches of stabilizer generating sets.

    axs/azs are (A, n) uint64, aps (A, n) uint8; likewise for b.  Returns a
    float64 matrix of shape (A, B).
    """
    A = axs.shape[0]
    B = bxs.shape[0]
    out = np.zeros((A, B), dtype=np.float64)
    a_rows = [([int(v) for v in axs[i]], [int(v) for v in azs[i]], [int(v) for v in aps[i]]) for i in range(A)]
    b_rows = [([int(v) for v in bxs[i]], [int(v) for v in bzs[i]], [int(v) for v in bps[i]]) for i in range(B)]
    for i in range(A):
        ax, az, ap = a_rows[i]
        for j in range(B):
            bx, bz, bp = b_rows[j]
            out[i, j] = _abs2_single(ax, az, ap, bx, bz, bp, n)
    return out


def pauli_expect_many(sxs, szs, sps, n, px, pz, pp):
    """<phi|P|phi> for each canonical stabilizer block; values in {0, +1, -1}.

    P = i^pp X^px Z^pz must be Hermitian.  sxs/szs (S, n) uint64, sps (S, n)
    uint8, canonical row-reduced form required (pivot-directed reduction).
    """
    S = sxs.shape[0]
    out = np.zeros(S, dtype=np.float64)
    for s in range(S):
        sx = [int(v) for v in sxs[s]]
        sz = [int(v) for v in szs[s]]
        sp = [int(v) for v in sps[s]]
        pivots = {}
        for r in range(n):
            if sx[r] == 0 and sz[r] == 0:
                continue
            if sx[r]:
                col = (sx[r] & -sx[r]).bit_length() - 1
            else:
                col = n + (sz[r] & -sz[r]).bit_length() - 1
            pivots[col] = r
        x = int(px)
        z = int(pz)
        gx = 0
        gz = 0
        gp = 0
        ok = True
        while x or z:
            if x:
                col = (x & -x).bit_length() - 1
            else:
                col = n + (z & -z).bit_length() - 1
            r = pivots.get(col)
            if r is None:
                ok = False
                break
            gp = (gp + sp[r] + 2 * ((gz & sx[r]).bit_count() & 1)) & 3
            gx ^= sx[r]
            gz ^= sz[r]
            x ^= sx[r]
            z ^= sz[r]
        if not ok:
            out[s] = 0.0
        else:
            d = (int(pp) - gp) & 3
            out[s] = 1.0 if d == 0 else -1.0
    return out
