import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import dense_ref
from nqst import stabilizer as sb


def random_circuit(n, depth, rng):
    circ = sb.CliffordCircuit(n)
    for _ in range(depth):
        kind = rng.integers(0, 4)
        if kind == 0:
            circ.h(int(rng.integers(0, n)))
        elif kind == 1:
            circ.s(int(rng.integers(0, n)))
        elif kind == 2 and n > 1:
            c, t = rng.choice(n, size=2, replace=False)
            circ.cnot(int(c), int(t))
        else:
            x = int(rng.integers(0, 1 << n))
            z = int(rng.integers(0, 1 << n))
            if x or z:
                circ.pauli(sb.PauliOperator(n, x, z, 0))
    return circ


def global_phase_overlap(u, v):
    return abs(np.vdot(u, v))


class TestGateConventions:
    @pytest.mark.parametrize("n,depth,seed", [(1, 8, 0), (2, 16, 1), (3, 30, 2), (3, 60, 3)])
    def test_random_circuits_match_dense(self, n, depth, seed):
        rng = np.random.default_rng(seed)
        for _ in range(20):
            circ = random_circuit(n, depth, rng)
            state = sb.StabilizerState(n).apply(circ)
            dense = dense_ref.run_circuit(circ)
            assert global_phase_overlap(state.to_dense(), dense) == pytest.approx(1.0, abs=1e-10)

    def test_s_twice_on_plus_flips_x(self):
        state = sb.StabilizerState(1).apply(sb.CliffordCircuit(1).h(0).s(0).s(0))
        assert state.expect_pauli(sb.PauliOperator.from_label("X")) == -1.0
        dense = dense_ref.run_circuit(sb.CliffordCircuit(1).h(0).s(0).s(0))
        assert np.vdot(dense, dense_ref.pauli_dense(1, "X") @ dense).real == pytest.approx(-1.0)

    def test_pauli_gate_phase_is_global(self):
        circ = sb.CliffordCircuit(2).h(0).cnot(0, 1)
        circ.pauli(sb.PauliOperator.from_label("XY", "-i"))
        state = sb.StabilizerState(2).apply(circ)
        dense = dense_ref.run_circuit(circ)
        assert global_phase_overlap(state.to_dense(), dense) == pytest.approx(1.0, abs=1e-12)


class TestAmplitudeGauge:
    def test_ghz_support(self):
        state = sb.StabilizerState(3).apply(sb.ghz_circuit(3))
        codes, amps = state.support()
        assert sorted(int(c) for c in codes) == [0, 7]
        assert np.allclose(np.abs(amps), 1 / np.sqrt(2.0))
        assert np.allclose(state.to_dense(), dense_ref.ghz_vector(3))

    def test_lex_smallest_point_positive(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            n = int(rng.integers(1, 5))
            state = sb.StabilizerState(n).apply(random_circuit(n, 25, rng))
            codes, amps = state.support()
            # lex order on bit strings: qubit 0 first, so compare reversed ints
            rev = [int("".join(str((int(c) >> q) & 1) for q in range(n)), 2) for c in codes]
            i0 = int(np.argmin(rev))
            assert amps[i0].imag == pytest.approx(0.0, abs=1e-12)
            assert amps[i0].real == pytest.approx(2.0 ** (-0.5 * np.log2(len(codes))), abs=1e-12)

    def test_amplitudes_match_support_and_normalize(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            n = int(rng.integers(1, 5))
            state = sb.StabilizerState(n).apply(random_circuit(n, 25, rng))
            codes, amps = state.support()
            assert np.sum(np.abs(amps) ** 2) == pytest.approx(1.0, abs=1e-12)
            queried = state.amplitudes(codes)
            assert np.allclose(queried, amps)
            everything = np.arange(1 << n, dtype=np.uint64)
            allamps = state.amplitudes(everything)
            assert np.sum(np.abs(allamps) ** 2) == pytest.approx(1.0, abs=1e-12)
            dense = state.to_dense()
            idx = sb.codes_to_dense_indices(everything, n)
            assert np.allclose(allamps, dense[idx])

    def test_amplitude_single(self):
        state = sb.StabilizerState(2).apply(sb.ghz_circuit(2))
        assert state.amplitude(np.array([0, 0])) == pytest.approx(1 / np.sqrt(2))
        assert state.amplitude(np.array([1, 0])) == 0


class TestMeasurement:
    def test_deterministic_zero_state(self):
        rng = np.random.default_rng(0)
        outcome, post = sb.StabilizerState(2).measure_z(0, rng)
        assert outcome == 0
        assert np.allclose(post.to_dense(), sb.StabilizerState(2).to_dense())

    def test_plus_state_measurement_collapses(self):
        rng = np.random.default_rng(3)
        state = sb.StabilizerState(1).apply(sb.CliffordCircuit(1).h(0))
        seen = set()
        for _ in range(40):
            outcome, post = state.measure_z(0, rng)
            seen.add(outcome)
            target = np.zeros(2, dtype=complex)
            target[outcome] = 1.0
            assert global_phase_overlap(post.to_dense(), target) == pytest.approx(1.0)
        assert seen == {0, 1}

    def test_sampling_matches_born_rule(self):
        rng = np.random.default_rng(5)
        circ = random_circuit(3, 30, np.random.default_rng(12))
        state = sb.StabilizerState(3).apply(circ)
        probs = np.abs(state.to_dense()) ** 2
        counts = np.zeros(8)
        m = 4000
        for _ in range(m):
            bits = state.sample_basis(rng)
            counts[sb.code_to_dense_index(sb.bits_to_code(bits), 3)] += 1
        assert np.max(np.abs(counts / m - probs)) < 4 * np.sqrt(0.25 / m) + 0.01

    def test_ghz_measurements_correlated(self):
        rng = np.random.default_rng(9)
        state = sb.StabilizerState(4).apply(sb.ghz_circuit(4))
        for _ in range(20):
            bits = state.sample_basis(rng)
            assert len(set(bits.tolist())) == 1


class TestInnerProducts:
    def test_inner_product_matches_dense(self):
        rng = np.random.default_rng(21)
        for _ in range(40):
            n = int(rng.integers(1, 4))
            a = sb.StabilizerState(n).apply(random_circuit(n, 20, rng))
            b = sb.StabilizerState(n).apply(random_circuit(n, 20, rng))
            got = sb.inner_product(a, b)
            want = np.vdot(a.to_dense(), b.to_dense())
            assert got == pytest.approx(want, abs=1e-12)
            assert sb.inner_product(b, a) == pytest.approx(np.conj(got), abs=1e-12)
            assert sb.inner_abs2(a, b) == pytest.approx(abs(want) ** 2, abs=1e-12)

    def test_abs2_matrix_batch(self):
        rng = np.random.default_rng(23)
        states = [sb.StabilizerState(3).apply(random_circuit(3, 25, rng)) for _ in range(12)]
        mat = sb.abs2_matrix_states(states, states)
        dense = [s.to_dense() for s in states]
        want = np.abs(np.conj(np.stack(dense)) @ np.stack(dense).T) ** 2
        assert np.allclose(mat, want, atol=1e-12)
        assert np.allclose(np.diag(mat), 1.0)

    def test_expect_pauli_matches_dense(self):
        rng = np.random.default_rng(29)
        for _ in range(60):
            n = int(rng.integers(1, 4))
            state = sb.StabilizerState(n).apply(random_circuit(n, 20, rng))
            x = int(rng.integers(0, 1 << n))
            z = int(rng.integers(0, 1 << n))
            p = (int(x & z).bit_count() + 2 * int(rng.integers(0, 2))) & 3
            op = sb.PauliOperator(n, x, z, p)
            dense = state.to_dense()
            want = np.vdot(dense, op.to_dense() @ dense).real
            assert state.expect_pauli(op) == pytest.approx(want, abs=1e-12)


class TestCircuitText:
    def test_round_trip(self):
        circ = sb.CliffordCircuit(3).h(0).cnot(0, 1).s(2)
        circ.pauli(sb.PauliOperator.from_label("XYZ", "-i"))
        text = circ.to_text()
        back = sb.CliffordCircuit.from_text(text, 3)
        assert back.to_text() == text
        semis = circ.to_text(sep=";")
        assert sb.CliffordCircuit.from_text(semis, 3).to_text() == text

    def test_pauli_label_round_trip(self):
        for label in ["IXYZ", "YYYY", "IIII", "ZXIY"]:
            for ph in ["+1", "-1", "+i", "-i"]:
                op = sb.PauliOperator.from_label(label, ph)
                assert op.to_label() == (label, ph)

    def test_rejects_bad_gates(self):
        with pytest.raises(ValueError):
            sb.CliffordCircuit.from_text("ROTATE 1", 2)
        with pytest.raises(ValueError):
            sb.CliffordCircuit(2).cnot(0, 0)
        with pytest.raises(ValueError):
            sb.CliffordCircuit(2).h(5)


class TestRandomClifford:
    def test_synthesis_reproduces_tableau(self):
        rng = np.random.default_rng(31)
        for _ in range(25):
            n = int(rng.integers(1, 5))
            circ = random_circuit(n, 30, rng)
            want = sb.clifford_tableau(circ)
            snap = sb._CliffordTableau(
                n, want.xs.copy(), want.zs.copy(), want.ph.copy()
            )
            rebuilt = sb._synthesize(snap)
            got = sb.clifford_tableau(rebuilt)
            assert np.array_equal(got.xs, want.xs)
            assert np.array_equal(got.zs, want.zs)
            assert np.array_equal(got.ph, want.ph)

    def test_random_clifford_is_valid(self):
        rng = np.random.default_rng(37)
        for n in (1, 2, 3, 4):
            for _ in range(10):
                circ = sb.random_clifford(n, rng)
                state = sb.StabilizerState(n).apply(circ)
                codes, amps = state.support()
                assert np.sum(np.abs(amps) ** 2) == pytest.approx(1.0)

    def test_single_qubit_uniformity_coarse(self):
        rng = np.random.default_rng(41)
        counts = {}
        m = 3000
        for _ in range(m):
            tab = sb.clifford_tableau(sb.random_clifford(1, rng))
            key = (int(tab.xs[0]), int(tab.zs[0]), int(tab.ph[0]),
                   int(tab.xs[1]), int(tab.zs[1]), int(tab.ph[1]))
            counts[key] = counts.get(key, 0) + 1
        assert len(counts) == 24
        for c in counts.values():
            assert abs(c / m - 1 / 24) < 5 * np.sqrt((1 / 24) * (23 / 24) / m)


class TestGhzPreparation:
    def test_noiseless_is_ghz(self):
        rng = np.random.default_rng(43)
        for n in (2, 3, 5):
            state = sb.prepare_noisy_ghz(n, 0.0, rng)
            assert np.allclose(state.to_dense(), dense_ref.ghz_vector(n))

    def test_noisy_trajectories_are_valid_states(self):
        rng = np.random.default_rng(47)
        for _ in range(20):
            state = sb.prepare_noisy_ghz(4, 0.5, rng)
            codes, amps = state.support()
            assert np.sum(np.abs(amps) ** 2) == pytest.approx(1.0)

    def test_rejects_bad_probability(self):
        with pytest.raises(ValueError):
            sb.prepare_noisy_ghz(3, 1.5, np.random.default_rng(0))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4))
def test_state_key_identifies_state(seed, n):
    rng = np.random.default_rng(seed)
    a = sb.StabilizerState(n).apply(random_circuit(n, 20, rng))
    b = sb.StabilizerState(n).apply(random_circuit(n, 20, rng))
    same_dense = global_phase_overlap(a.to_dense(), b.to_dense()) > 1 - 1e-9
    assert (a.key() == b.key()) == same_dense


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_measurement_preserves_normalization(seed):
    rng = np.random.default_rng(seed)
    n = 3
    state = sb.StabilizerState(n).apply(random_circuit(n, 25, rng))
    for q in range(n):
        outcome, state = state.measure_z(q, rng)
        assert outcome in (0, 1)
    codes, amps = state.support()
    assert len(codes) == 1
