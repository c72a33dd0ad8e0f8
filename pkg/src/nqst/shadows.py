"""Classical shadow acquisition and post-processing.

A dataset is a list of (unitary, outcome) records from randomized
measurements: per-qubit random {X,Y,Z} bases or one uniformly random Clifford
per shot.  Everything downstream (shadow state, shadow weights, empirical
distribution, observable estimates) reduces to per-record contributions, so
the unphysical estimator rho-hat never has to be materialized except through
the explicitly size-guarded dense paths.
"""

import numpy as np

from . import stabilizer as sb
from .backend import kernels as K

BASIS_X = 0
BASIS_Y = 1
BASIS_Z = 2
_BASIS_CHARS = "XYZ"

DENSE_MAX_QUBITS = 12


class DegenerateDatasetError(RuntimeError):
    """Raised when every distinct snapshot has zero shadow weight."""


class SnapshotRecord:
    __slots__ = ("ensemble", "unitary", "outcome")

    def __init__(self, ensemble, unitary, outcome):
        self.ensemble = ensemble
        self.unitary = unitary
        self.outcome = np.asarray(outcome, dtype=np.uint8)

    def basis_string(self):
        if self.ensemble != "pauli":
            raise ValueError("basis string only defined for Pauli records")
        return "".join(_BASIS_CHARS[b] for b in self.unitary)

    def __repr__(self):
        return f"SnapshotRecord({self.ensemble}, outcome={self.outcome.tolist()})"


class ShadowDataset:
    """Immutable collection of snapshot records sharing n and ensemble.

    Pauli records are stored as two (N, n) uint8 arrays (bases, outcomes);
    Clifford records keep their circuits in a list alongside the outcomes.
    """

    def __init__(self, n, ensemble, bases=None, outcomes=None, circuits=None, seed=0):
        if ensemble not in ("pauli", "clifford"):
            raise ValueError(f"unknown ensemble {ensemble!r}")
        self.n = n
        self.ensemble = ensemble
        self.seed = int(seed)
        self.outcomes = np.asarray(outcomes, dtype=np.uint8)
        if self.outcomes.ndim != 2 or self.outcomes.shape[1] != n:
            raise ValueError("outcomes must be (N, n)")
        if ensemble == "pauli":
            self.bases = np.asarray(bases, dtype=np.uint8)
            if self.bases.shape != self.outcomes.shape:
                raise ValueError("bases and outcomes shapes differ")
            self.circuits = None
        else:
            self.circuits = list(circuits)
            if len(self.circuits) != self.outcomes.shape[0]:
                raise ValueError("circuit count and outcome count differ")
            self.bases = None
        if len(self) < 1:
            raise ValueError("dataset needs at least one record")

    def __len__(self):
        return self.outcomes.shape[0]

    def record(self, i):
        if self.ensemble == "pauli":
            return SnapshotRecord("pauli", self.bases[i], self.outcomes[i])
        return SnapshotRecord("clifford", self.circuits[i], self.outcomes[i])

    def records(self):
        for i in range(len(self)):
            yield self.record(i)

    def subset(self, indices):
        idx = np.asarray(indices, dtype=np.int64)
        if self.ensemble == "pauli":
            return ShadowDataset(
                self.n, "pauli", bases=self.bases[idx], outcomes=self.outcomes[idx],
                seed=self.seed,
            )
        return ShadowDataset(
            self.n, "clifford", outcomes=self.outcomes[idx],
            circuits=[self.circuits[i] for i in idx], seed=self.seed,
        )

    # -- serialization ---------------------------------------------------

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(
                f"SHADOWSET v1 n={self.n} ensemble={self.ensemble}"
                f" N={len(self)} seed={self.seed}\n"
            )
            if self.ensemble == "pauli":
                for i in range(len(self)):
                    basis = "".join(_BASIS_CHARS[b] for b in self.bases[i])
                    bits = "".join(str(b) for b in self.outcomes[i])
                    fh.write(f"P {basis} {bits}\n")
            else:
                for i in range(len(self)):
                    circ = self.circuits[i]
                    bits = "".join(str(b) for b in self.outcomes[i])
                    text = circ.to_text(sep=";")
                    fh.write(f"C {len(circ)} | {text} | {bits}\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            header = fh.readline().strip()
            fields = header.split()
            if fields[:2] != ["SHADOWSET", "v1"]:
                raise ValueError(f"not a SHADOWSET v1 file: {header!r}")
            kv = dict(part.split("=", 1) for part in fields[2:])
            n = int(kv["n"])
            ensemble = kv["ensemble"]
            count = int(kv["N"])
            seed = int(kv["seed"])
            bases = []
            outcomes = []
            circuits = []
            for raw in fh:
                line = raw.strip()
                if not line:
                    continue
                if line.startswith("P "):
                    _, basis, bits = line.split()
                    bases.append([_BASIS_CHARS.index(ch) for ch in basis])
                    outcomes.append([int(ch) for ch in bits])
                elif line.startswith("C "):
                    head, text, bits = (part.strip() for part in line.split("|"))
                    gate_count = int(head.split()[1])
                    circ = sb.CliffordCircuit.from_text(text, n)
                    if len(circ) != gate_count:
                        raise ValueError("gate count mismatch in record")
                    circuits.append(circ)
                    outcomes.append([int(ch) for ch in bits])
                else:
                    raise ValueError(f"bad record line: {line!r}")
        if ensemble == "pauli":
            ds = cls(n, "pauli", bases=np.array(bases, dtype=np.uint8),
                     outcomes=np.array(outcomes, dtype=np.uint8), seed=seed)
        else:
            ds = cls(n, "clifford", outcomes=np.array(outcomes, dtype=np.uint8),
                     circuits=circuits, seed=seed)
        if len(ds) != count:
            raise ValueError("record count does not match header")
        return ds


class DenseOperator:
    """Plain 2^n x 2^n complex matrix with its qubit count."""

    __slots__ = ("n", "mat")

    def __init__(self, n, mat):
        self.n = n
        self.mat = np.asarray(mat, dtype=np.complex128)
        if self.mat.shape != (1 << n, 1 << n):
            raise ValueError("matrix shape does not match qubit count")

    def trace(self):
        return complex(np.trace(self.mat))

    def is_hermitian(self, tol=1e-10):
        return bool(np.max(np.abs(self.mat - self.mat.conj().T)) <= tol)

    def __repr__(self):
        return f"DenseOperator(n={self.n})"


class WeightedStabilizerSet:
    """Distinct stabilizer states with a probability vector over them."""

    __slots__ = ("states", "weights", "counts")

    def __init__(self, states, weights, counts=None):
        self.states = list(states)
        self.weights = np.asarray(weights, dtype=np.float64)
        if self.weights.shape != (len(self.states),):
            raise ValueError("one weight per state required")
        if np.any(self.weights < -1e-15):
            raise ValueError("weights must be nonnegative")
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-12:
            raise ValueError("weights must sum to 1")
        self.counts = None if counts is None else np.asarray(counts, dtype=np.int64)

    def __len__(self):
        return len(self.states)


def _pauli_rotation_gates(bases):
    # X basis: H; Y basis: S^3 then H (S^3 = S^-1); Z basis: nothing
    gates = []
    for q, b in enumerate(bases):
        if b == BASIS_X:
            gates.append((sb.GATE_H, q, 0))
        elif b == BASIS_Y:
            gates.append((sb.GATE_S, q, 0))
            gates.append((sb.GATE_S, q, 0))
            gates.append((sb.GATE_S, q, 0))
            gates.append((sb.GATE_H, q, 0))
    if not gates:
        return np.zeros((0, 3), dtype=np.int64)
    return np.array(gates, dtype=np.int64)


class GhzPreparation:
    """Preparation procedure: a fresh noisy-GHZ trajectory per shot."""

    def __init__(self, n, noise_p=0.0):
        self.n = n
        self.noise_p = noise_p

    def __call__(self, rng):
        return sb.prepare_noisy_ghz(self.n, self.noise_p, rng)


class FixedPreparation:
    """Preparation procedure that serves the same stabilizer state every shot."""

    def __init__(self, state):
        self.n = state.n
        self.state = state

    def __call__(self, rng):
        return self.state.copy()


def acquire_shadows(prep, ensemble, n_snapshots, rng, seed=0):
    """Generate a shadow dataset.

    prep is either a fixed StabilizerState or a callable rng -> StabilizerState
    giving a fresh preparation trajectory per shot (an `n` attribute on the
    callable avoids a probe call).  Draw order per shot is (preparation,
    unitary, measurement bits), so datasets are reproducible from the
    generator state.  seed is metadata recorded in the file header.
    """
    if n_snapshots < 1:
        raise ValueError("need at least one snapshot")
    fixed = None if callable(prep) else prep
    if fixed is not None:
        n = fixed.n
    else:
        n = getattr(prep, "n", None)
        if n is None:
            n = prep(np.random.default_rng(0)).n
    outcomes = np.zeros((n_snapshots, n), dtype=np.uint8)
    if ensemble == "pauli":
        bases = np.zeros((n_snapshots, n), dtype=np.uint8)
        for i in range(n_snapshots):
            state = fixed.copy() if fixed is not None else prep(rng)
            b = rng.integers(0, 3, size=n).astype(np.uint8)
            bases[i] = b
            enc = _pauli_rotation_gates(b)
            if enc.shape[0]:
                K.apply_gates(state._xs, state._zs, state._ph, n, enc)
            rbits = rng.integers(0, 2, size=n).astype(np.uint8)
            outcomes[i] = K.measure_all(state._xs, state._zs, state._ph, n, rbits)
        return ShadowDataset(n, "pauli", bases=bases, outcomes=outcomes, seed=seed)
    if ensemble == "clifford":
        circuits = []
        for i in range(n_snapshots):
            state = fixed.copy() if fixed is not None else prep(rng)
            circ = sb.random_clifford(n, rng)
            circuits.append(circ)
            K.apply_gates(state._xs, state._zs, state._ph, n, circ.encoded())
            rbits = rng.integers(0, 2, size=n).astype(np.uint8)
            outcomes[i] = K.measure_all(state._xs, state._zs, state._ph, n, rbits)
        return ShadowDataset(n, "clifford", outcomes=outcomes, circuits=circuits, seed=seed)
    raise ValueError(f"unknown ensemble {ensemble!r}")


def snapshot_state(record):
    """The stabilizer state whose measurement the record describes."""
    n = len(record.outcome)
    if record.ensemble == "pauli":
        state = sb.StabilizerState(n)
        for q in range(n):
            b = int(record.unitary[q])
            s = int(record.outcome[q])
            if b == BASIS_X:
                x, z, p = 1, 0, 0
                dx, dz = 0, 1
            elif b == BASIS_Y:
                x, z, p = 1, 1, 1
                dx, dz = 0, 1
            else:
                x, z, p = 0, 1, 0
                dx, dz = 1, 0
            state._xs[n + q] = np.uint64(x << q)
            state._zs[n + q] = np.uint64(z << q)
            state._ph[n + q] = np.uint8((p + 2 * s) & 3)
            state._xs[q] = np.uint64(dx << q)
            state._zs[q] = np.uint64(dz << q)
            state._ph[q] = np.uint8(0)
        state._canon = None
        state._gauge = None
        state._key = None
        return state
    base = sb.StabilizerState.from_bits(record.outcome)
    return base.apply(record.unitary.inverse())


_SINGLE_STATES = {
    (BASIS_Z, 0): np.array([1.0, 0.0], dtype=complex),
    (BASIS_Z, 1): np.array([0.0, 1.0], dtype=complex),
    (BASIS_X, 0): np.array([1.0, 1.0], dtype=complex) / np.sqrt(2),
    (BASIS_X, 1): np.array([1.0, -1.0], dtype=complex) / np.sqrt(2),
    (BASIS_Y, 0): np.array([1.0, 1.0j], dtype=complex) / np.sqrt(2),
    (BASIS_Y, 1): np.array([1.0, -1.0j], dtype=complex) / np.sqrt(2),
}


def _pauli_record_factors(bases, outcome):
    factors = []
    for b, s in zip(bases, outcome):
        u = _SINGLE_STATES[(int(b), int(s))]
        factors.append(3.0 * np.outer(u, u.conj()) - np.eye(2))
    return factors


def inverse_map(record):
    """Dense M^-1(rho_i) for one record; Hermitian with unit trace."""
    n = len(record.outcome)
    if n > DENSE_MAX_QUBITS:
        raise ValueError("dense inverse map limited to 12 qubits")
    if record.ensemble == "pauli":
        mat = np.array([[1.0]], dtype=complex)
        for f in _pauli_record_factors(record.unitary, record.outcome):
            mat = np.kron(mat, f)
        return DenseOperator(n, mat)
    phi = snapshot_state(record).to_dense()
    mat = ((1 << n) + 1) * np.outer(phi, phi.conj()) - np.eye(1 << n)
    return DenseOperator(n, mat)


def shadow_state(dataset):
    """Mean of the inverse maps: the (generally non-PSD) estimator rho-hat."""
    n = dataset.n
    if n > DENSE_MAX_QUBITS:
        raise ValueError("dense shadow state limited to 12 qubits")
    total = np.zeros((1 << n, 1 << n), dtype=complex)
    if dataset.ensemble == "pauli":
        rows = np.concatenate([dataset.bases, dataset.outcomes], axis=1)
        uniq, counts = np.unique(rows, axis=0, return_counts=True)
        for row, c in zip(uniq, counts):
            rec = SnapshotRecord("pauli", row[:n], row[n:])
            total += c * inverse_map(rec).mat
    else:
        # identical snapshot states share one dense outer product
        states, counts = _distinct_snapshots(dataset)
        dim = 1 << n
        for st, c in zip(states, counts):
            phi = st.to_dense()
            total += c * np.outer(phi, phi.conj())
        total = (dim + 1) * total - len(dataset) * np.eye(dim)
    return DenseOperator(n, total / len(dataset))


def _distinct_snapshots(dataset):
    """Distinct snapshot states with multiplicities, first-appearance order."""
    states = []
    counts = []
    index_of = {}
    for i in range(len(dataset)):
        st = snapshot_state(dataset.record(i))
        k = st.key()
        j = index_of.get(k)
        if j is None:
            index_of[k] = len(states)
            states.append(st)
            counts.append(1)
        else:
            counts[j] += 1
    return states, np.array(counts, dtype=np.int64)


def empirical_distribution(dataset):
    states, counts = _distinct_snapshots(dataset)
    return WeightedStabilizerSet(states, counts / len(dataset), counts)


# per-qubit shadow weight factor 3|<a|b>|^2 - 1 for the six eigenstates:
# 2 if identical, -1 if orthogonal, 0.5 across bases
_FACTOR6 = np.full((6, 6), 0.5)
for _i in range(6):
    _FACTOR6[_i, _i] = 2.0
    _FACTOR6[_i, _i ^ 1] = -1.0


def _product_form(state):
    """Per-qubit (basis, sign) if the state is a product of Pauli eigenstates."""
    n = state.n
    sx, sz, sp = state.canonical()
    per_qubit = [None] * n
    for r in range(n):
        x = int(sx[r])
        z = int(sz[r])
        support = x | z
        if support == 0 or (support & (support - 1)):
            return None
        q = support.bit_length() - 1
        xb = (x >> q) & 1
        zb = (z >> q) & 1
        p = int(sp[r])
        if xb and zb:
            basis, sign = BASIS_Y, (p - 1) & 3
        elif xb:
            basis, sign = BASIS_X, p
        else:
            basis, sign = BASIS_Z, p
        per_qubit[q] = (basis, sign >> 1)
    if any(v is None for v in per_qubit):
        return None
    return per_qubit


def _pauli_weight_means(dataset, qstates, chunk=64):
    """Mean per-record product factors for product states (Q, n) vs dataset."""
    bases = dataset.bases.astype(np.int64)
    outs = dataset.outcomes.astype(np.int64)
    rec_idx = bases * 2 + outs
    Q = qstates.shape[0]
    means = np.zeros(Q)
    for lo in range(0, Q, chunk):
        hi = min(Q, lo + chunk)
        block = qstates[lo:hi]
        f = _FACTOR6[block[:, None, :], rec_idx[None, :, :]]
        means[lo:hi] = f.prod(axis=2).mean(axis=1)
    return means


def shadow_weight(phi, dataset):
    """w(phi) = |<phi| rho-hat |phi>| without materializing rho-hat."""
    if phi.n != dataset.n:
        raise ValueError("qubit count mismatch")
    n = dataset.n
    if dataset.ensemble == "clifford":
        snaps = [snapshot_state(r) for r in dataset.records()]
        overlaps = sb.abs2_matrix_states([phi], snaps)[0]
        vals = ((1 << n) + 1) * overlaps - 1.0
        return float(abs(vals.mean()))
    form = _product_form(phi)
    if form is not None:
        qstate = np.array([[b * 2 + s for (b, s) in form]], dtype=np.int64)
        return float(abs(_pauli_weight_means(dataset, qstate)[0]))
    if n > DENSE_MAX_QUBITS:
        raise ValueError("entangled phi against Pauli records needs n <= 12")
    vec = phi.to_dense()
    rho = shadow_state(dataset).mat
    return float(abs(np.vdot(vec, rho @ vec).real))


def normalized_shadow_weights(dataset):
    """p^sh over the distinct snapshots: shadow weights normalized to 1."""
    states, counts = _distinct_snapshots(dataset)
    n = dataset.n
    if dataset.ensemble == "clifford":
        mat = sb.abs2_matrix_states(states, states)
        contrib = ((1 << n) + 1) * mat - 1.0
        w = np.abs(contrib @ counts / counts.sum())
    else:
        qstates = []
        for st in states:
            form = _product_form(st)
            if form is None:
                raise AssertionError("Pauli snapshot was not a product state")
            qstates.append([b * 2 + s for (b, s) in form])
        w = np.abs(_pauli_weight_means(dataset, np.array(qstates, dtype=np.int64)))
    total = float(w.sum())
    if total <= 0.0:
        raise DegenerateDatasetError("all shadow weights are zero")
    return WeightedStabilizerSet(states, w / total, counts)


def pauli_record_estimates(dataset, op):
    """Per-record values Tr(P * M^-1(rho_i)); P must have real phase."""
    if op.n != dataset.n:
        raise ValueError("Pauli width mismatch")
    phase = op.phase
    if phase.imag != 0.0:
        raise ValueError("estimate needs a +1/-1 phase Pauli")
    sign = phase.real
    n = dataset.n
    if op.is_identity():
        return np.full(len(dataset), float(sign))
    if dataset.ensemble == "pauli":
        # per record: 3^|P| * (-1)^(outcome parity on support) if bases match
        support = [q for q in range(n) if (op.x >> q) & 1 or (op.z >> q) & 1]
        want = np.zeros(len(support), dtype=np.uint8)
        for j, q in enumerate(support):
            xb = (op.x >> q) & 1
            zb = (op.z >> q) & 1
            want[j] = BASIS_Y if (xb and zb) else (BASIS_X if xb else BASIS_Z)
        sub_b = dataset.bases[:, support]
        sub_o = dataset.outcomes[:, support]
        match = np.all(sub_b == want[None, :], axis=1)
        par = (sub_o.sum(axis=1) & 1).astype(np.float64)
        vals = np.where(match, 3.0 ** len(support) * (1.0 - 2.0 * par), 0.0)
        return sign * vals
    snaps = [snapshot_state(r) for r in dataset.records()]
    sxs = np.stack([s.canonical()[0] for s in snaps])
    szs = np.stack([s.canonical()[1] for s in snaps])
    sps = np.stack([s.canonical()[2] for s in snaps])
    expect = K.pauli_expect_many(sxs, szs, sps, n, op.x, op.z, op.p)
    # phase is folded into op.p by the kernel, so no extra sign here
    return ((1 << n) + 1) * expect


def estimate_pauli(dataset, op):
    """Mean over records of Tr(P * M^-1(rho_i)); P must have real phase."""
    return float(pauli_record_estimates(dataset, op).mean())


def simplex_project_eigs(lam):
    """Euclidean projection of a real vector onto the probability simplex."""
    lam = np.asarray(lam, dtype=np.float64)
    srt = np.sort(lam)[::-1]
    css = np.cumsum(srt)
    j = np.arange(1, lam.size + 1)
    cond = srt + (1.0 - css) / j > 0
    rho = int(np.nonzero(cond)[0][-1]) + 1
    theta = (1.0 - css[rho - 1]) / rho
    return np.maximum(lam + theta, 0.0)


def simplex_project(op):
    """Nearest density matrix: project the spectrum onto the simplex."""
    if op.n > DENSE_MAX_QUBITS:
        raise ValueError("projection limited to 12 qubits")
    if not op.is_hermitian():
        raise ValueError("projection needs a Hermitian operator")
    lam, vecs = np.linalg.eigh(op.mat)
    lam2 = simplex_project_eigs(lam)
    return DenseOperator(op.n, (vecs * lam2) @ vecs.conj().T)
