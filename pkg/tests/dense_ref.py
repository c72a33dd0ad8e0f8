"""Dense statevector reference used as an oracle in tests.

Everything here is brute force on 2^n vectors; qubit 0 sits on the most
significant bit of the basis index, matching StabilizerState.to_dense.
"""

import numpy as np

H1 = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0)
S1 = np.array([[1, 0], [0, 1j]], dtype=complex)
X1 = np.array([[0, 1], [1, 0]], dtype=complex)
Z1 = np.array([[1, 0], [0, -1]], dtype=complex)
CNOT2 = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


def lift1(n, q, u):
    """Embed a single-qubit unitary on qubit q into the full register."""
    mat = np.array([[1]], dtype=complex)
    for i in range(n):
        mat = np.kron(mat, u if i == q else np.eye(2, dtype=complex))
    return mat


def lift2_cnot(n, c, t):
    dim = 1 << n
    mat = np.zeros((dim, dim), dtype=complex)
    for idx in range(dim):
        cbit = (idx >> (n - 1 - c)) & 1
        j = idx ^ (cbit << (n - 1 - t))
        mat[j, idx] = 1.0
    return mat


def gate_unitary(n, gate):
    op = gate[0]
    if op == 0:
        return lift1(n, gate[1], H1)
    if op == 1:
        return lift1(n, gate[1], S1)
    if op == 2:
        return lift2_cnot(n, gate[1], gate[2])
    if op == 3:
        mat = np.array([[1]], dtype=complex)
        for q in range(n):
            xb = (gate[1] >> q) & 1
            zb = (gate[2] >> q) & 1
            local = np.eye(2, dtype=complex)
            if xb and zb:
                local = X1 @ Z1
            elif xb:
                local = X1
            elif zb:
                local = Z1
            mat = np.kron(mat, local)
        p = gate[3] if len(gate) > 3 else 0
        return (1j ** p) * mat
    raise ValueError(f"bad gate {gate}")


def circuit_unitary(circ):
    dim = 1 << circ.n
    u = np.eye(dim, dtype=complex)
    for g in circ.gates:
        u = gate_unitary(circ.n, g) @ u
    return u


def run_circuit(circ, vec=None):
    if vec is None:
        vec = np.zeros(1 << circ.n, dtype=complex)
        vec[0] = 1.0
    for g in circ.gates:
        vec = gate_unitary(circ.n, g) @ vec
    return vec


def basis_vector(n, bits):
    idx = 0
    for q, b in enumerate(bits):
        if b:
            idx |= 1 << (n - 1 - q)
    vec = np.zeros(1 << n, dtype=complex)
    vec[idx] = 1.0
    return vec


def pauli_dense(n, label, phase=1.0):
    mat = np.array([[phase]], dtype=complex)
    table = {"I": np.eye(2, dtype=complex), "X": X1, "Z": Z1, "Y": 1j * X1 @ Z1}
    for ch in label:
        mat = np.kron(mat, table[ch])
    return mat


def measure_z_outcome_probs(vec, n, q):
    """(p0, post0, p1, post1) for a Z measurement on qubit q."""
    dim = vec.size
    mask0 = np.array([((i >> (n - 1 - q)) & 1) == 0 for i in range(dim)])
    v0 = np.where(mask0, vec, 0)
    v1 = np.where(~mask0, vec, 0)
    p0 = float(np.vdot(v0, v0).real)
    p1 = float(np.vdot(v1, v1).real)
    post0 = v0 / np.sqrt(p0) if p0 > 1e-12 else None
    post1 = v1 / np.sqrt(p1) if p1 > 1e-12 else None
    return p0, post0, p1, post1


def ghz_vector(n):
    vec = np.zeros(1 << n, dtype=complex)
    vec[0] = 1 / np.sqrt(2.0)
    vec[-1] = 1 / np.sqrt(2.0)
    return vec
