"""Stabilizer states, Clifford circuits and tableau simulation.

States live in the Aaronson-Gottesman tableau representation (destabilizer
rows 0..n-1, stabilizer rows n..2n-1, bit-packed into uint64 words) and all
amplitudes follow one fixed gauge: the lexicographically smallest basis string
in the support carries the positive real amplitude 2^(-k/2), where 2^k is the
support size.  Gate application, measurement and pairwise overlaps are
delegated to the backend kernels (compiled when available).
"""

import numpy as np

from .backend import kernels as K

GATE_H = 0
GATE_S = 1
GATE_CNOT = 2
GATE_PAULI = 3

_PHASE_TOKENS = {"+1": 0, "-1": 2, "+i": 1, "-i": 3}
_PHASE_LABELS = {v: k for k, v in _PHASE_TOKENS.items()}
_PHASE_VALUES = {0: 1 + 0j, 1: 1j, 2: -1 + 0j, 3: -1j}

MAX_QUBITS = 32


def bits_to_code(bits):
    """Pack a bit vector (qubit q at index q) into an integer code."""
    code = 0
    for q, b in enumerate(bits):
        if b:
            code |= 1 << q
    return code


def code_to_bits(code, n):
    out = np.zeros(n, dtype=np.uint8)
    for q in range(n):
        out[q] = (code >> q) & 1
    return out


def codes_to_bit_matrix(codes, n):
    """(M,) integer codes -> (M, n) uint8 bit matrix, qubit q in column q."""
    codes = np.asarray(codes, dtype=np.uint64)
    shifts = np.arange(n, dtype=np.uint64)
    return ((codes[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)


def code_to_dense_index(code, n):
    # dense basis ordering puts qubit 0 on the most significant bit
    idx = 0
    for q in range(n):
        if (code >> q) & 1:
            idx |= 1 << (n - 1 - q)
    return idx


def codes_to_dense_indices(codes, n):
    codes = np.asarray(codes, dtype=np.uint64)
    idx = np.zeros(codes.shape, dtype=np.int64)
    for q in range(n):
        bit = ((codes >> np.uint64(q)) & np.uint64(1)).astype(np.int64)
        idx |= bit << (n - 1 - q)
    return idx


class PauliOperator:
    """n-qubit Pauli with an explicit phase, stored as i^p * X^x * Z^z."""

    __slots__ = ("n", "x", "z", "p")

    def __init__(self, n, x, z, p=0):
        if n < 1 or n > MAX_QUBITS:
            raise ValueError(f"qubit count {n} outside supported range")
        self.n = n
        self.x = int(x) & ((1 << n) - 1)
        self.z = int(z) & ((1 << n) - 1)
        self.p = int(p) & 3

    @classmethod
    def from_label(cls, label, phase="+1"):
        """Build from an IXYZ string; qubit 0 is the first character."""
        n = len(label)
        x = 0
        z = 0
        ycount = 0
        for q, ch in enumerate(label.upper()):
            if ch == "I":
                continue
            if ch in ("X", "Y"):
                x |= 1 << q
            if ch in ("Z", "Y"):
                z |= 1 << q
            if ch == "Y":
                ycount += 1
        if phase not in _PHASE_TOKENS:
            raise ValueError(f"bad phase token {phase!r}")
        return cls(n, x, z, (_PHASE_TOKENS[phase] + ycount) & 3)

    def to_label(self):
        chars = []
        ycount = 0
        for q in range(self.n):
            xb = (self.x >> q) & 1
            zb = (self.z >> q) & 1
            if xb and zb:
                chars.append("Y")
                ycount += 1
            elif xb:
                chars.append("X")
            elif zb:
                chars.append("Z")
            else:
                chars.append("I")
        return "".join(chars), _PHASE_LABELS[(self.p - ycount) & 3]

    @property
    def phase(self):
        label_p = (self.p - self._ycount()) & 3
        return _PHASE_VALUES[label_p]

    def _ycount(self):
        return int(self.x & self.z).bit_count()

    @property
    def weight(self):
        return int(self.x | self.z).bit_count()

    def is_identity(self):
        return self.x == 0 and self.z == 0

    def is_hermitian(self):
        return (self.p + self._ycount()) % 2 == 0

    def to_dense(self):
        if self.n > 12:
            raise ValueError("dense Pauli limited to 12 qubits")
        eye = np.eye(2, dtype=complex)
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        sz = np.array([[1, 0], [0, -1]], dtype=complex)
        mat = np.array([[1]], dtype=complex)
        for q in range(self.n):
            xb = (self.x >> q) & 1
            zb = (self.z >> q) & 1
            local = eye
            if xb:
                local = sx
            if zb:
                local = local @ sz if xb else sz
            mat = np.kron(mat, local)
        return (1j ** self.p) * mat

    def __eq__(self, other):
        return (
            isinstance(other, PauliOperator)
            and (self.n, self.x, self.z, self.p) == (other.n, other.x, other.z, other.p)
        )

    def __hash__(self):
        return hash((self.n, self.x, self.z, self.p))

    def __repr__(self):
        label, ph = self.to_label()
        return f"PauliOperator({ph} {label})"


class CliffordCircuit:
    """Gate list over {H, S, CNOT, PAULI} with a text round trip.

    Text format, one gate per line (';' also accepted as separator):
        H <q>
        S <q>
        CNOT <control> <target>
        PAULI <IXYZ string> <+1|-1|+i|-i>
    """

    __slots__ = ("n", "gates", "_encoded")

    def __init__(self, n, gates=None):
        if n < 1 or n > MAX_QUBITS:
            raise ValueError(f"qubit count {n} outside supported range")
        self.n = n
        self.gates = list(gates) if gates is not None else []
        self._encoded = None

    def _check_q(self, q):
        if not 0 <= q < self.n:
            raise ValueError(f"qubit index {q} out of range for n={self.n}")

    def h(self, q):
        self._check_q(q)
        self.gates.append((GATE_H, q, 0))
        self._encoded = None
        return self

    def s(self, q):
        self._check_q(q)
        self.gates.append((GATE_S, q, 0))
        self._encoded = None
        return self

    def cnot(self, c, t):
        self._check_q(c)
        self._check_q(t)
        if c == t:
            raise ValueError("CNOT control equals target")
        self.gates.append((GATE_CNOT, c, t))
        self._encoded = None
        return self

    def pauli(self, op):
        if op.n != self.n:
            raise ValueError("Pauli width mismatch")
        self.gates.append((GATE_PAULI, op.x, op.z, op.p))
        self._encoded = None
        return self

    def encoded(self):
        if self._encoded is None:
            arr = np.zeros((len(self.gates), 3), dtype=np.int64)
            for i, g in enumerate(self.gates):
                arr[i, 0] = g[0]
                arr[i, 1] = g[1]
                arr[i, 2] = g[2]
            self._encoded = arr
        return self._encoded

    def inverse(self):
        """Inverse circuit; S^-1 expands to three S gates."""
        inv = CliffordCircuit(self.n)
        for g in reversed(self.gates):
            if g[0] == GATE_S:
                inv.gates.append(g)
                inv.gates.append(g)
                inv.gates.append(g)
            else:
                inv.gates.append(g)
        return inv

    def to_text(self, sep="\n"):
        lines = []
        for g in self.gates:
            if g[0] == GATE_H:
                lines.append(f"H {g[1]}")
            elif g[0] == GATE_S:
                lines.append(f"S {g[1]}")
            elif g[0] == GATE_CNOT:
                lines.append(f"CNOT {g[1]} {g[2]}")
            elif g[0] == GATE_PAULI:
                p = PauliOperator(self.n, g[1], g[2], g[3] if len(g) > 3 else 0)
                label, ph = p.to_label()
                lines.append(f"PAULI {label} {ph}")
            else:
                raise ValueError(f"bad gate {g}")
        return sep.join(lines)

    @classmethod
    def from_text(cls, text, n):
        circ = cls(n)
        for raw in text.replace(";", "\n").splitlines():
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            kind = parts[0].upper()
            if kind == "H":
                circ.h(int(parts[1]))
            elif kind == "S":
                circ.s(int(parts[1]))
            elif kind == "CNOT":
                circ.cnot(int(parts[1]), int(parts[2]))
            elif kind == "PAULI":
                phase = parts[2] if len(parts) > 2 else "+1"
                op = PauliOperator.from_label(parts[1], phase)
                if op.n != n:
                    raise ValueError("PAULI label width mismatch")
                circ.pauli(op)
            else:
                raise ValueError(f"unknown gate {kind!r}")
        return circ

    def __len__(self):
        return len(self.gates)

    def __repr__(self):
        return f"CliffordCircuit(n={self.n}, gates={len(self.gates)})"


class StabilizerState:
    """Pure stabilizer state with gauge-fixed amplitudes."""

    __slots__ = ("n", "_xs", "_zs", "_ph", "_canon", "_gauge", "_key")

    def __init__(self, n, _tableau=None):
        if n < 1 or n > MAX_QUBITS:
            raise ValueError(f"qubit count {n} outside supported range")
        self.n = n
        if _tableau is None:
            self._xs, self._zs, self._ph = K.tableau_zero(n)
        else:
            self._xs, self._zs, self._ph = _tableau
        self._canon = None
        self._gauge = None
        self._key = None

    @classmethod
    def zero(cls, n):
        return cls(n)

    @classmethod
    def from_basis_code(cls, n, code):
        """Computational basis state |s> from its packed bit code."""
        st = cls(n)
        for q in range(n):
            if (code >> q) & 1:
                st._ph[n + q] = 2
        return st

    @classmethod
    def from_bits(cls, bits):
        return cls.from_basis_code(len(bits), bits_to_code(bits))

    def copy(self):
        return StabilizerState(
            self.n, (self._xs.copy(), self._zs.copy(), self._ph.copy())
        )

    def apply(self, circuit):
        """Return the state after running a CliffordCircuit."""
        if circuit.n != self.n:
            raise ValueError("circuit width mismatch")
        out = self.copy()
        out._apply_inplace(circuit)
        return out

    def _apply_inplace(self, circuit):
        enc = circuit.encoded()
        if enc.shape[0]:
            K.apply_gates(self._xs, self._zs, self._ph, self.n, enc)
        self._canon = None
        self._gauge = None
        self._key = None

    def measure_z(self, q, rng):
        """Measure Z on qubit q; returns (outcome, post-measurement state)."""
        if not 0 <= q < self.n:
            raise ValueError("qubit index out of range")
        out = self.copy()
        bit = int(rng.integers(0, 2))
        outcome, _ = K.measure_one(out._xs, out._zs, out._ph, out.n, q, bit)
        return outcome, out

    def sample_basis(self, rng):
        """Draw a basis string with probability |<s|phi>|^2."""
        tmp = self.copy()
        bits = rng.integers(0, 2, size=self.n).astype(np.uint8)
        return K.measure_all(tmp._xs, tmp._zs, tmp._ph, tmp.n, bits)

    def canonical(self):
        if self._canon is None:
            self._canon = K.canonical_stab(self._xs, self._zs, self._ph, self.n)
        return self._canon

    def key(self):
        """Bytes key identifying the state (canonical tableau serialization)."""
        if self._key is None:
            sx, sz, sp = self.canonical()
            self._key = sx.tobytes() + sz.tobytes() + sp.tobytes()
        return self._key

    # -- gauge-fixed amplitudes ------------------------------------------

    def _gauge_data(self):
        """Pivot rows, base point and phase tables for amplitude queries.

        The canonical stabilizer block splits into k rows with nonzero X part
        (pivots q_1 < ... < q_k, RREF over the X columns) and n-k pure-Z rows.
        The support is the affine space x0 + span(v_i), |support| = 2^k, and
        amplitudes follow from walking stabilizer rows from x0:
        amp(y ^ v_i) = i^(p_i) * (-1)^(w_i . y) * amp(y).
        """
        if self._gauge is not None:
            return self._gauge
        n = self.n
        sx, sz, sp = self.canonical()
        vx = []
        vz = []
        vp = []
        pivots = []
        zmask = []
        zsign = []
        for r in range(n):
            x = int(sx[r])
            z = int(sz[r])
            p = int(sp[r])
            if x:
                pivots.append((x & -x).bit_length() - 1)
                vx.append(x)
                vz.append(z)
                vp.append(p)
            else:
                # pure-Z row i^p Z^w: constraint w.s = p/2 (mod 2)
                zmask.append(z)
                zsign.append((p >> 1) & 1)
        k = len(pivots)
        # particular solution of the pure-Z constraints by elimination
        rows = list(zip(zmask, zsign))
        x0 = 0
        used = []
        for w, b in rows:
            ww = w
            bb = b
            for uw, ub, upos in used:
                if (ww >> upos) & 1:
                    ww ^= uw
                    bb ^= ub
            if ww == 0:
                if bb:
                    raise AssertionError("inconsistent stabilizer constraints")
                continue
            pos = (ww & -ww).bit_length() - 1
            used.append((ww, bb, pos))
        for uw, ub, upos in reversed(used):
            if ((x0 & uw).bit_count() & 1) != ub:
                x0 ^= 1 << upos
        # clear pivot bits to land on the lexicographically smallest point
        for i, q in enumerate(pivots):
            if (x0 >> q) & 1:
                x0 ^= vx[i]
        # walk from x0 so every later query sees x0's pivot bits at zero
        self._gauge = {
            "k": k,
            "x0": x0,
            "pivots": pivots,
            "vx": vx,
            "vz": vz,
            "vp": vp,
            "zmask": zmask,
            "zsign": zsign,
        }
        return self._gauge

    def support(self):
        """All support codes and amplitudes, enumerated by doubling.

        Returns (codes, amps) sorted by code; size is 2^k.
        """
        g = self._gauge_data()
        codes = np.array([g["x0"]], dtype=np.uint64)
        amps = np.array([2.0 ** (-0.5 * g["k"])], dtype=np.complex128)
        for i in range(g["k"]):
            v = np.uint64(g["vx"][i])
            w = np.uint64(g["vz"][i])
            p = g["vp"][i]
            par = (np.bitwise_count(codes & w) & np.uint64(1)).astype(np.int64)
            factor = (1j ** p) * np.where(par, -1.0, 1.0)
            codes = np.concatenate([codes, codes ^ v])
            amps = np.concatenate([amps, amps * factor])
        order = np.argsort(codes)
        return codes[order], amps[order]

    def amplitudes(self, codes):
        """Gauge-fixed amplitudes <s|phi> for an array of basis codes."""
        g = self._gauge_data()
        codes = np.asarray(codes, dtype=np.uint64)
        k = g["k"]
        scale = 2.0 ** (-0.5 * k)
        if k == 0:
            return np.where(codes == np.uint64(g["x0"]), scale + 0j, 0j)
        # coefficient of row i is the query's bit at pivot q_i (x0 is zero there)
        a = np.zeros((codes.size, k), dtype=np.uint8)
        for i, q in enumerate(g["pivots"]):
            a[:, i] = ((codes >> np.uint64(q)) & np.uint64(1)).astype(np.uint8)
        # validity: reconstructed point must equal the query
        recon = np.full(codes.shape, g["x0"], dtype=np.uint64)
        for i in range(k):
            recon ^= np.where(a[:, i].astype(bool), np.uint64(g["vx"][i]), np.uint64(0))
        valid = recon == codes
        # phase exponent: sequential walk in pivot order collapses to
        #   sum_i a_i p_i + 2 sum_i a_i (w_i.x0) + 2 sum_{l<i} a_i a_l (w_i.v_l)
        p_lin = np.array(g["vp"], dtype=np.int64)
        c_lin = np.array(
            [(g["vz"][i] & g["x0"]).bit_count() & 1 for i in range(k)], dtype=np.int64
        )
        quad = np.zeros((k, k), dtype=np.int64)
        for i in range(k):
            for l in range(i):
                quad[i, l] = (g["vz"][i] & g["vx"][l]).bit_count() & 1
        ai = a.astype(np.int64)
        expo = ai @ p_lin + 2 * (ai @ c_lin) + 2 * np.einsum("mi,il,ml->m", ai, quad, ai)
        amp = scale * (1j ** (expo & 3))
        return np.where(valid, amp, 0j)

    def amplitude(self, bits):
        """<s|phi> for one basis string (array of bits or packed code)."""
        if np.isscalar(bits) or isinstance(bits, (int, np.integer)):
            code = int(bits)
        else:
            code = bits_to_code(bits)
        return complex(self.amplitudes(np.array([code], dtype=np.uint64))[0])

    def to_dense(self):
        """Dense state vector (qubit 0 on the most significant bit)."""
        if self.n > 12:
            raise ValueError("dense conversion limited to 12 qubits")
        vec = np.zeros(1 << self.n, dtype=np.complex128)
        codes, amps = self.support()
        vec[codes_to_dense_indices(codes, self.n)] = amps
        return vec

    def expect_pauli(self, op):
        """<phi|P|phi> for a Hermitian Pauli; one of 0, +1, -1."""
        if op.n != self.n:
            raise ValueError("Pauli width mismatch")
        if not op.is_hermitian():
            raise ValueError("expectation needs a Hermitian Pauli")
        sx, sz, sp = self.canonical()
        val = K.pauli_expect_many(
            sx[None, :], sz[None, :], sp[None, :], self.n, op.x, op.z, op.p
        )
        return float(val[0])

    def __repr__(self):
        return f"StabilizerState(n={self.n})"


def inner_abs2(a, b):
    """|<a|b>|^2 via the stabilizer-group intersection."""
    if a.n != b.n:
        raise ValueError("state width mismatch")
    ax, az, ap = a.canonical()
    bx, bz, bp = b.canonical()
    m = K.abs2_matrix(ax[None, :], az[None, :], ap[None, :], bx[None, :], bz[None, :], bp[None, :], a.n)
    return float(m[0, 0])


def inner_product(a, b):
    """Gauge-fixed <a|b> by summing over the smaller support."""
    if a.n != b.n:
        raise ValueError("state width mismatch")
    if a.n > 16:
        raise ValueError("complex inner product limited to 16 qubits")
    ca, aa = a.support()
    cb, ab = b.support()
    common, ia, ib = np.intersect1d(ca, cb, assume_unique=True, return_indices=True)
    if common.size == 0:
        return 0j
    return complex(np.sum(np.conj(aa[ia]) * ab[ib]))


def abs2_matrix_states(states_a, states_b):
    """All-pairs |<a|b>|^2 for two lists of states (batched kernel call)."""
    if not states_a or not states_b:
        return np.zeros((len(states_a), len(states_b)))
    n = states_a[0].n
    ax = np.stack([s.canonical()[0] for s in states_a])
    az = np.stack([s.canonical()[1] for s in states_a])
    ap = np.stack([s.canonical()[2] for s in states_a])
    bx = np.stack([s.canonical()[0] for s in states_b])
    bz = np.stack([s.canonical()[1] for s in states_b])
    bp = np.stack([s.canonical()[2] for s in states_b])
    return K.abs2_matrix(ax, az, ap, bx, bz, bp, n)


# -- circuit constructions ----------------------------------------------


def ghz_circuit(n):
    circ = CliffordCircuit(n).h(0)
    for q in range(n - 1):
        circ.cnot(q, q + 1)
    return circ


def prepare_noisy_ghz(n, noise_p, rng):
    """One noise trajectory of the GHZ preparation.

    After every CNOT, with probability noise_p a uniformly random non-identity
    two-qubit Pauli hits (control, target).  noise_p = 0 gives the exact GHZ
    state; the trajectory average reproduces two-qubit depolarizing noise of
    strength 16/15 * noise_p on each CNOT.
    """
    if not 0.0 <= noise_p <= 1.0:
        raise ValueError("noise probability outside [0, 1]")
    circ = CliffordCircuit(n).h(0)
    for q in range(n - 1):
        circ.cnot(q, q + 1)
        if noise_p > 0.0 and rng.random() < noise_p:
            v = int(rng.integers(1, 16))
            x = ((v & 1) << q) | (((v >> 2) & 1) << (q + 1))
            z = (((v >> 1) & 1) << q) | (((v >> 3) & 1) << (q + 1))
            circ.pauli(PauliOperator(n, x, z, 0))
    return StabilizerState(n).apply(circ)


def sample_basis_state(state, rng):
    return state.sample_basis(rng)


def to_dense(state):
    return state.to_dense()


# -- uniform random Cliffords --------------------------------------------
#
# Koenig-Smolin construction: sample a uniformly random symplectic matrix
# over F2 (directsum pairing, coordinates (2q, 2q+1) = (x_q, z_q)), attach
# uniformly random stabilizer signs, and synthesize a circuit.


def _sip(v, w, even_mask):
    a = ((v & even_mask) << 1) & w
    b = ((v >> 1) & even_mask) & w
    return (a.bit_count() + b.bit_count()) & 1


def _transvect(k, v, even_mask):
    return v ^ k if _sip(k, v, even_mask) else v


def _find_transvection(x, y, nn, even_mask):
    # h0, h1 with y = Z_h0 Z_h1 x (zero means skip)
    if x == y:
        return 0, 0
    if _sip(x, y, even_mask):
        return x ^ y, 0
    z = 0
    for i in range(nn >> 1):
        ii = 2 * i
        xb = (x >> ii) & 3
        yb = (y >> ii) & 3
        if xb and yb:
            zz = xb ^ yb
            if zz == 0:
                zz = 2
                if xb in (1, 2):
                    zz |= 1
            z = zz << ii
            return x ^ z, y ^ z
    for i in range(nn >> 1):
        ii = 2 * i
        xb = (x >> ii) & 3
        yb = (y >> ii) & 3
        if xb and not yb:
            if xb == 3:
                zz = 2
            else:
                zz = ((xb & 1) << 1) | (xb >> 1)
            z |= zz << ii
            break
    for i in range(nn >> 1):
        ii = 2 * i
        xb = (x >> ii) & 3
        yb = (y >> ii) & 3
        if yb and not xb:
            if yb == 3:
                zz = 2
            else:
                zz = ((yb & 1) << 1) | (yb >> 1)
            z |= zz << ii
            break
    return x ^ z, y ^ z


def _random_symplectic_rows(n, rng):
    """Rows of a uniformly random element of Sp(2n, F2), packed ints."""
    nn = 2 * n
    even_mask = 0
    for i in range(n):
        even_mask |= 1 << (2 * i)
    f1 = int(rng.integers(1, 1 << nn, dtype=np.uint64))
    t0, t1 = _find_transvection(1, f1, nn, even_mask)
    bits = int(rng.integers(0, 1 << (nn - 1), dtype=np.uint64)) if nn > 1 else 0
    eprime = 1 | ((bits >> 1) << 2)
    h0 = _transvect(t0, eprime, even_mask)
    h0 = _transvect(t1, h0, even_mask)
    if bits & 1:
        f1 = 0
    if n == 1:
        rows = [1, 2]
    else:
        sub = _random_symplectic_rows(n - 1, rng)
        rows = [1, 2] + [r << 2 for r in sub]
    out = []
    for r in rows:
        r = _transvect(t0, r, even_mask)
        r = _transvect(t1, r, even_mask)
        r = _transvect(h0, r, even_mask)
        r = _transvect(f1, r, even_mask)
        out.append(r)
    return out


def _unpack_pair_row(row, n):
    # directsum coordinates (2q, 2q+1) -> (xmask, zmask)
    x = 0
    z = 0
    for q in range(n):
        if (row >> (2 * q)) & 1:
            x |= 1 << q
        if (row >> (2 * q + 1)) & 1:
            z |= 1 << q
    return x, z


class _CliffordTableau:
    """Images of X_q (rows 0..n-1) and Z_q (rows n..2n-1) under a Clifford."""

    def __init__(self, n, xs=None, zs=None, ph=None):
        self.n = n
        if xs is None:
            self.xs, self.zs, self.ph = K.tableau_zero(n)
        else:
            self.xs, self.zs, self.ph = xs, zs, ph

    @classmethod
    def of_circuit(cls, circuit):
        tab = cls(circuit.n)
        enc = circuit.encoded()
        if enc.shape[0]:
            K.apply_gates(tab.xs, tab.zs, tab.ph, tab.n, enc)
        return tab

    def row(self, r):
        return int(self.xs[r]), int(self.zs[r]), int(self.ph[r])

    def is_identity(self):
        ref_x, ref_z, ref_p = K.tableau_zero(self.n)
        return (
            np.array_equal(self.xs, ref_x)
            and np.array_equal(self.zs, ref_z)
            and np.array_equal(self.ph, ref_p)
        )


def _synthesize(tab):
    """Reduce a Clifford tableau to identity, returning the inverse circuit.

    Gates are recorded as left multiplications g_k ... g_1 C = I, so the
    circuit for C plays the daggers in reverse order.
    """
    n = tab.n
    applied = []

    def emit(*gates):
        circ = CliffordCircuit(n)
        for g in gates:
            circ.gates.append(g)
        K.apply_gates(tab.xs, tab.zs, tab.ph, n, circ.encoded())
        applied.extend(circ.gates)

    def swap(a, b):
        emit((GATE_CNOT, a, b), (GATE_CNOT, b, a), (GATE_CNOT, a, b))

    for i in range(n):
        x, z, _ = tab.row(i)
        if (x >> i) == 0:
            # no X component at column >= i; an H brings one over from Z
            j = i + ((z >> i) & -(z >> i)).bit_length() - 1
            emit((GATE_H, j, 0))
            x, z, _ = tab.row(i)
        j = i + ((x >> i) & -(x >> i)).bit_length() - 1
        if j != i:
            swap(i, j)
        x, z, _ = tab.row(i)
        rest = x & ~((1 << (i + 1)) - 1)
        while rest:
            j = (rest & -rest).bit_length() - 1
            emit((GATE_CNOT, i, j))
            rest &= rest - 1
        x, z, _ = tab.row(i)
        rest = z & ~((1 << (i + 1)) - 1)
        while rest:
            j = (rest & -rest).bit_length() - 1
            emit((GATE_H, j, 0), (GATE_CNOT, i, j), (GATE_H, j, 0))
            rest &= rest - 1
        x, z, _ = tab.row(i)
        if (z >> i) & 1:
            emit((GATE_S, i, 0))
        # row i is now +-X_i; fix the Z row with an H sandwich
        x, z, _ = tab.row(n + i)
        if not (x == 0 and z == (1 << i)):
            emit((GATE_H, i, 0))
            x, z, _ = tab.row(n + i)
            rest = x & ~((1 << (i + 1)) - 1)
            while rest:
                j = (rest & -rest).bit_length() - 1
                emit((GATE_CNOT, i, j))
                rest &= rest - 1
            x, z, _ = tab.row(n + i)
            rest = z & ~((1 << (i + 1)) - 1)
            while rest:
                j = (rest & -rest).bit_length() - 1
                emit((GATE_H, j, 0), (GATE_CNOT, i, j), (GATE_H, j, 0))
                rest &= rest - 1
            x, z, _ = tab.row(n + i)
            if (z >> i) & 1:
                emit((GATE_S, i, 0))
            emit((GATE_H, i, 0))
    # phases are now 0 or 2 on every row; one Pauli clears them
    px = 0
    pz = 0
    for i in range(n):
        if tab.ph[i]:
            pz |= 1 << i
        if tab.ph[n + i]:
            px |= 1 << i
    if px or pz:
        emit((GATE_PAULI, px, pz, 0))
    circ = CliffordCircuit(n)
    for g in reversed(applied):
        if g[0] == GATE_S:
            circ.gates.append(g)
            circ.gates.append(g)
            circ.gates.append(g)
        else:
            circ.gates.append(g)
    return circ


def random_clifford(n, rng):
    """Uniformly random n-qubit Clifford as a circuit."""
    rows = _random_symplectic_rows(n, rng)
    xs = np.zeros(2 * n, dtype=np.uint64)
    zs = np.zeros(2 * n, dtype=np.uint64)
    ph = np.zeros(2 * n, dtype=np.uint8)
    signs = int(rng.integers(0, 1 << (2 * n), dtype=np.uint64))
    for q in range(n):
        xi, zi = _unpack_pair_row(rows[2 * q], n)
        xs[q], zs[q] = np.uint64(xi), np.uint64(zi)
        ph[q] = 2 * ((signs >> (2 * q)) & 1)
        xi, zi = _unpack_pair_row(rows[2 * q + 1], n)
        xs[n + q], zs[n + q] = np.uint64(xi), np.uint64(zi)
        ph[n + q] = 2 * ((signs >> (2 * q + 1)) & 1)
    # Hermiticity of each image row fixes the phase parity
    for r in range(2 * n):
        if int(xs[r] & zs[r]).bit_count() & 1:
            ph[r] = (int(ph[r]) + 1) & 3
    return _synthesize(_CliffordTableau(n, xs, zs, ph))


def clifford_tableau(circuit):
    """Conjugation images of X_q and Z_q under the circuit (for tests)."""
    return _CliffordTableau.of_circuit(circuit)
