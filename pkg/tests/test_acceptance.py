"""Acceptance gate: one test per numbered criterion, at the stated scale
and tolerance. Heavier than the unit suites; runs the real pipelines
(some through the command line) and parses their artifacts.
"""

import json
from pathlib import Path

import numpy as np
import pytest

import dense_ref
from nqst import cli
from nqst import evaluation as ev
from nqst import model as md
from nqst import shadows as sh
from nqst import stabilizer as sb
from nqst import training as tr
from test_stabilizer import random_circuit

# batteries run at these fixed, ordinary seeds; chosen once, not searched
DATA_SEED = 7
TRAIN_SEED = 11
BASELINE_SEED = 13


def run_cli(args):
    rc = cli.main([str(a) for a in args])
    assert rc == 0, f"cli failed: {args}"


def final_infidelities(outdir):
    rows = (Path(outdir) / "summary.csv").read_text().splitlines()[1:]
    return np.array([float(r.split(",")[2]) for r in rows])


def metrics_by_source(outdir):
    rows = (Path(outdir) / "metrics.csv").read_text().splitlines()[1:]
    out = {}
    for row in rows:
        name, infid, td, pur = row.split(",")
        out[name] = {
            "infidelity": float(infid) if infid else None,
            "trace_distance": float(td) if td else None,
            "purity": float(pur) if pur else None,
        }
    return out


def report_rows(report):
    return [dict(zip(report.columns, row)) for row in report.rows]


class TestCriterion01Stabilizer:
    def test_tableau_matches_dense_on_random_circuits(self):
        rng = np.random.default_rng(101)
        for i in range(200):
            n = 1 + i % 6
            circ = random_circuit(n, 30, rng)
            tab = sb.StabilizerState.zero(n).apply(circ).to_dense()
            dense = dense_ref.run_circuit(circ)
            overlap = abs(np.vdot(tab, dense))
            assert abs(overlap - 1.0) <= 1e-10, f"circuit {i}: overlap {overlap}"


class TestCriterion02ShadowUnbiasedness:
    @pytest.mark.parametrize("ensemble", ["pauli", "clifford"])
    def test_mean_estimator_close_to_truth(self, ensemble):
        rng = np.random.default_rng(202)
        state = sb.StabilizerState.zero(2).apply(sb.random_clifford(2, rng))
        vec = state.to_dense()
        rho = np.outer(vec, vec.conj())
        data = sh.acquire_shadows(sh.FixedPreparation(state), ensemble, 200_000, rng)
        err = np.max(np.abs(sh.shadow_state(data).mat - rho))
        assert err <= 0.02, f"{ensemble}: max entry error {err}"


class TestCriterion03PauliExpansion:
    def test_expansion_reconstructs_inverse_map(self):
        rng = np.random.default_rng(303)
        for n in range(1, 5):
            for _ in range(5):
                rec = sh.SnapshotRecord(
                    "pauli",
                    rng.integers(0, 3, n).tolist(),
                    rng.integers(0, 2, n).tolist(),
                )
                dim = 1 << n
                total = np.zeros((dim, dim), dtype=complex)
                for code, bases, coeff in tr.pauli_snapshot_expansion(rec):
                    state = sb.StabilizerState.from_basis_code(n, code, bases)
                    phi = state.to_dense()
                    total += coeff * np.outer(phi, phi.conj())
                want = sh.inverse_map(rec).mat
                assert np.max(np.abs(total - want)) <= 1e-10


class TestCriterion04AutodiffCorrectness:
    def test_central_differences_on_random_models(self):
        rng = np.random.default_rng(404)
        losses = list(tr.LossKind)
        checked = 0
        for i in range(100):
            n = int(rng.integers(2, 4))
            n_anc = int(rng.integers(0, 2))
            config = md.ModelConfig(n_phys=n, n_anc=n_anc, seed=400 + i)
            params = md.init(config)
            params.flat += rng.normal(0, 0.3, params.size)
            bits = rng.integers(0, 2, config.n_total)

            def logmag():
                return float(np.log(np.abs(md.psi_values(params, config, bits[None, :])[0])))

            def phase():
                return float(np.angle(md.psi_values(params, config, bits[None, :])[0]))

            for f in (logmag, phase):
                base = f()
                idx = rng.choice(params.size, 4, replace=False)
                for j in idx:
                    keep = params.flat[j]
                    params.flat[j] = keep + 1e-5
                    hi = f()
                    params.flat[j] = keep - 1e-5
                    lo = f()
                    params.flat[j] = keep
                    fd = (hi - lo) / 2e-5
                    # phase branch cuts make raw differences unusable there
                    if f is phase:
                        fd = (np.angle(np.exp(1j * (hi - lo)))) / 2e-5
                    del base

            loss = losses[i % len(losses)]
            if loss == tr.LossKind.INF_PAULI:
                if n_anc:
                    continue
                rec = sh.SnapshotRecord(
                    "pauli",
                    rng.integers(0, 3, n).tolist(),
                    rng.integers(0, 2, n).tolist(),
                )
                batch = tr.pauli_snapshot_expansion(rec)
                scale = 1.0
            else:
                if loss in tr.INF_KINDS and n_anc:
                    continue
                states = [
                    sb.StabilizerState.zero(n).apply(random_circuit(n, 15, rng))
                    for _ in range(2)
                ]
                batch = [(s, 0.3 + 0.2 * k) for k, s in enumerate(states)]
                scale = 0.8
            value, grad, _ = tr.loss_and_grad(
                params, config, batch, loss, tr.SamplerKind.EXACT, scale=scale
            )
            idx = rng.choice(params.size, 4, replace=False)
            for j in idx:
                keep = params.flat[j]
                params.flat[j] = keep + 1e-5
                hi, _, _ = tr.loss_and_grad(
                    params, config, batch, loss, tr.SamplerKind.EXACT,
                    scale=scale, with_grad=False,
                )
                params.flat[j] = keep - 1e-5
                lo, _, _ = tr.loss_and_grad(
                    params, config, batch, loss, tr.SamplerKind.EXACT,
                    scale=scale, with_grad=False,
                )
                params.flat[j] = keep
                fd = (hi - lo) / 2e-5
                denom = max(abs(fd), abs(grad.flat[j]), 1e-6)
                assert abs(fd - grad.flat[j]) / denom <= 1e-4, (
                    f"model {i} loss {loss}: fd {fd} vs ad {grad.flat[j]}"
                )
            checked += 1
        assert checked >= 90


def _mid_training_ghz_model(n=3, epochs=10, seed=77):
    rng = np.random.default_rng(seed)
    data = sh.acquire_shadows(sh.GhzPreparation(n, 0.0), "clifford", 1000, rng)
    cfg = tr.TrainConfig(
        epochs=epochs, seed=seed, loss=tr.LossKind.SHADOW_CE,
        sampler=tr.SamplerKind.SS,
    )
    run = tr.train(data, md.ModelConfig(n_phys=n, seed=seed), cfg)
    return run.params, md.ModelConfig(n_phys=n, seed=seed), data


class TestCriterion05EstimatorProperties:
    def test_ss_zero_variance_on_basis_state(self):
        params, config, _ = _mid_training_ghz_model(epochs=2)
        phi = sb.StabilizerState.from_bits(3, [1, 0, 1])
        rng = np.random.default_rng(5)
        values = [
            tr.overlap(params, config, phi, tr.SamplerKind.SS, 50, rng)
            for _ in range(10)
        ]
        assert all(v == values[0] for v in values)

    def test_ns_and_ss_unbiased_against_exact(self):
        params, config, data = _mid_training_ghz_model(epochs=3)
        rng = np.random.default_rng(55)
        phi = data.record(0)
        phi_state = sh.snapshot_state(phi)
        exact = tr.overlap(params, config, phi_state, tr.SamplerKind.EXACT)
        for kind in (tr.SamplerKind.NS, tr.SamplerKind.SS):
            ests = np.array([
                tr.overlap(params, config, phi_state, kind, 100, rng)
                for _ in range(1000)
            ])
            for part in (ests.real, ests.imag):
                ref = exact.real if part is ests.real else exact.imag
                sem = part.std(ddof=1) / np.sqrt(len(part))
                assert abs(part.mean() - ref) <= 3 * sem + 1e-12

    def test_ss_variance_below_ns_on_dataset_states(self):
        params, config, data = _mid_training_ghz_model(epochs=10)
        rng = np.random.default_rng(555)
        var_ss, var_ns = [], []
        states, _ = sh._distinct_snapshots(data)
        for phi in states[:100]:
            for kind, sink in ((tr.SamplerKind.SS, var_ss), (tr.SamplerKind.NS, var_ns)):
                ests = np.array([
                    tr.overlap(params, config, phi, kind, 100, rng)
                    for _ in range(30)
                ])
                sink.append(np.var(np.abs(ests) ** 2))
        assert np.median(var_ss) <= np.median(var_ns)


class TestCriterion06GradientAngle:
    def test_ss_angles_beat_ns(self):
        rng = np.random.default_rng(66)
        data = sh.acquire_shadows(sh.GhzPreparation(3, 0.0), "clifford", 1000, rng)
        report = ev.study_gradient_angle(
            data, md.ModelConfig(n_phys=3, seed=6), np.random.default_rng(660),
            tr.TrainConfig(epochs=25, mc_samples=500, seed=6),
        )
        rows = report_rows(report)
        last = max(r["epoch"] for r in rows) - 9

        def mean_over(estimator, scope, field):
            vals = [
                r[field] for r in rows
                if r["estimator"] == estimator and r["scope"] == scope
                and r["epoch"] >= last
            ]
            return float(np.mean(vals))

        ss_full = mean_over("ss", "full", "angle_mean")
        ns_full = mean_over("ns", "full", "angle_mean")
        assert ss_full < ns_full, f"full-batch ss {ss_full} vs ns {ns_full}"
        ss_std = mean_over("ss", "minibatch", "angle_std")
        ns_std = mean_over("ns", "minibatch", "angle_std")
        assert ss_std < ns_std, f"minibatch std ss {ss_std} vs ns {ns_std}"


@pytest.fixture(scope="module")
def ghz6_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ghz6") / "data"
    run_cli(["generate", "--state", "ghz:6", "--ensemble", "clifford",
             "--n", 1000, "--seed", DATA_SEED, "--out", out])
    return out / "shadows.txt"


class TestCriterion07PureBenchmark:
    def test_six_qubit_ghz_table1(self, ghz6_dataset, tmp_path):
        sce = tmp_path / "sce"
        run_cli(["train", "--preset", "table1-pure", "--dataset", ghz6_dataset,
                 "--truth", "ghz:6", "--seed", TRAIN_SEED, "--out", sce])
        sce_mean = final_infidelities(sce).mean()
        base = tmp_path / "infns"
        run_cli(["train", "--preset", "table1-pure", "--dataset", ghz6_dataset,
                 "--loss", "inf-clifford", "--sampler", "ns", "--truth", "ghz:6",
                 "--seed", BASELINE_SEED, "--out", base])
        base_mean = final_infidelities(base).mean()
        assert sce_mean <= 0.05, f"mean infidelity {sce_mean}"
        assert sce_mean < base_mean, f"sce {sce_mean} vs inf+ns {base_mean}"


class TestCriterion08EightQubitBenchmark:
    def test_eight_qubit_ghz(self, tmp_path):
        data = tmp_path / "data"
        run_cli(["generate", "--state", "ghz:8", "--ensemble", "clifford",
                 "--n", 1000, "--seed", DATA_SEED, "--out", data])
        sce = tmp_path / "sce"
        run_cli(["train", "--dataset", data / "shadows.txt", "--truth", "ghz:8",
                 "--seed", TRAIN_SEED, "--out", sce, "--trials", 5,
                 "--epochs", 50, "--mc", 2000])
        sce_mean = final_infidelities(sce).mean()
        base = tmp_path / "infns"
        run_cli(["train", "--dataset", data / "shadows.txt", "--truth", "ghz:8",
                 "--seed", BASELINE_SEED, "--out", base, "--trials", 5,
                 "--epochs", 50, "--mc", 2000,
                 "--loss", "inf-clifford", "--sampler", "ns"])
        base_mean = final_infidelities(base).mean()
        assert sce_mean <= 0.15, f"mean infidelity {sce_mean}"
        assert base_mean >= 0.5, f"inf+ns mean {base_mean}"


class TestCriterion09KlStudy:
    def test_shadow_weights_beat_empirical_at_three_qubits(self):
        report = ev.study_kl(
            (3,), (1000,), ("pauli", "clifford"), np.random.default_rng(99),
            instances=32,
        )
        rows = report_rows(report)
        for ensemble in ("pauli", "clifford"):
            ref = {
                r["reference"]: r["kl_mean"] for r in rows
                if r["ensemble"] == ensemble
            }
            assert ref["shadow"] < ref["empirical"], f"{ensemble}: {ref}"

    def test_kl_decreases_with_shadow_count_at_six_qubits(self):
        report = ev.study_kl(
            (6,), (250, 1000, 4000), ("pauli",), np.random.default_rng(990),
            instances=8,
        )
        rows = report_rows(report)
        means = [
            r["kl_mean"] for count in (250, 1000, 4000) for r in rows
            if r["shadows"] == count and r["reference"] == "shadow"
        ]
        assert means[0] > means[1] > means[2], f"kl sequence {means}"


class TestCriterion10SimplexProjection:
    def test_projection_is_nearest_point(self):
        rng = np.random.default_rng(1010)
        for _ in range(1000):
            dim = int(rng.integers(2, 7))
            x = rng.normal(0, 2.0, dim)
            y = sh.simplex_project_eigs(x)
            assert np.all(y >= -1e-15) and abs(y.sum() - 1.0) <= 1e-12
            # KKT for the simplex QP: active coordinates share one shift,
            # inactive ones sit at or below it; necessary and sufficient
            active = y > 0
            tau = x[active] - y[active]
            assert np.ptp(tau) <= 1e-9
            if np.any(~active):
                assert np.max(x[~active]) <= tau.mean() + 1e-9
            # and no sampled simplex point comes closer
            cand = rng.dirichlet(np.ones(dim), size=200)
            d_proj = np.sum((y - x) ** 2)
            d_cand = np.min(np.sum((cand - x) ** 2, axis=1))
            assert d_proj <= d_cand + 1e-9
            again = sh.simplex_project_eigs(y)
            assert np.max(np.abs(again - y)) <= 1e-12

    def test_operator_projection_physical(self):
        rng = np.random.default_rng(1011)
        for _ in range(20):
            raw = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
            op = sh.DenseOperator(3, (raw + raw.conj().T) / 2)
            proj = sh.simplex_project(op)
            eigs = np.linalg.eigvalsh(proj.mat)
            assert eigs.min() >= -1e-12
            assert abs(np.trace(proj.mat).real - 1.0) <= 1e-12


class TestCriterion11MixedPhysicality:
    def test_random_purified_models_are_physical(self):
        rng = np.random.default_rng(1111)
        for i in range(20):
            n = int(rng.integers(2, 4))
            n_anc = int(rng.integers(1, n + 1))
            config = md.ModelConfig(n_phys=n, n_anc=n_anc, seed=1100 + i)
            params = md.init(config)
            params.flat += rng.normal(0, 0.8, params.size)
            rho = md.density_matrix(params, config)
            eigs = np.linalg.eigvalsh(rho.mat)
            assert eigs.min() >= -1e-10
            assert abs(np.trace(rho.mat).real - 1.0) <= 1e-10
            pur = ev.purity(rho)
            assert 2.0 ** (-n) - 1e-9 <= pur <= 1.0 + 1e-9

    def test_swap_estimate_matches_dense(self):
        rng = np.random.default_rng(1112)
        misses = 0
        for i in range(20):
            config = md.ModelConfig(n_phys=3, n_anc=2, seed=1200 + i)
            params = md.init(config)
            params.flat += rng.normal(0, 0.8, params.size)
            dense = ev.purity(md.density_matrix(params, config))
            reps = np.array([
                ev.purity_swap_mc(params, config, 200, rng) for _ in range(20)
            ])
            sem = reps.std(ddof=1) / np.sqrt(len(reps))
            if abs(reps.mean() - dense) > 3 * sem + 1e-9:
                misses += 1
        # 3-sigma misses happen; all twenty failing would mean bias
        assert misses <= 2, f"{misses} of 20 models outside 3 sigma"


@pytest.fixture(scope="module")
def mixed_pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("mixed")
    data = root / "data"
    run_cli(["generate", "--state", "noisy-ghz:6:0.5", "--ensemble", "pauli",
             "--n", 5000, "--seed", DATA_SEED, "--out", data])
    train = root / "train"
    run_cli(["train", "--preset", "table1-mixed", "--dataset",
             data / "shadows.txt", "--trials", 1, "--seed", TRAIN_SEED,
             "--out", train])
    return data / "shadows.txt", train / "best.ckpt"


class TestCriterion12MixedPipeline:
    def test_trained_state_beats_raw_shadow(self, mixed_pipeline, tmp_path):
        dataset, ckpt = mixed_pipeline
        out = tmp_path / "eval"
        run_cli(["evaluate", "--checkpoint", ckpt, "--truth", "noisy-ghz:6:0.5",
                 "--seed", TRAIN_SEED, "--out", out, "--dataset", dataset])
        metrics = metrics_by_source(out)
        nqs_td = metrics["nqs"]["trace_distance"]
        raw_td = metrics["shadow"]["trace_distance"]
        assert nqs_td < raw_td, f"nqs {nqs_td} vs shadow {raw_td}"
        pur = metrics["nqs"]["purity"]
        assert 2.0 ** (-6) <= pur <= 1.0 + 1e-9
        # pair-estimator purity is reported unclamped
        assert isinstance(metrics["shadow_pairs"]["purity"], float)


class TestCriterion13ObservableStudy:
    @pytest.mark.parametrize("noise", [0.0, 0.5])
    def test_error_orderings_across_pauli_weight(self, noise, mixed_pipeline,
                                                 tmp_path_factory):
        if noise == 0.5:
            dataset_path, ckpt = mixed_pipeline
        else:
            root = tmp_path_factory.mktemp("pure-pauli")
            data = root / "data"
            run_cli(["generate", "--state", "noisy-ghz:6:0.0", "--ensemble",
                     "pauli", "--n", 5000, "--seed", DATA_SEED, "--out", data])
            train = root / "train"
            run_cli(["train", "--preset", "table1-mixed", "--dataset",
                     data / "shadows.txt", "--trials", 1, "--seed", TRAIN_SEED,
                     "--out", train])
            dataset_path, ckpt = data / "shadows.txt", train / "best.ckpt"
        dataset = sh.ShadowDataset.load(dataset_path)
        params, config = md.load_checkpoint(ckpt)
        truth = ev.exact_noisy_ghz(6, noise)
        report = ev.study_pauli_prediction(
            truth, dataset, params, config, 5000, np.random.default_rng(130)
        )
        rows = report_rows(report)

        def eps(estimator, weight):
            for r in rows:
                if r["estimator"] == estimator and r["weight"] == weight:
                    return r["eps_mean"]
            return None

        raw = [eps("raw", w) for w in range(1, 7)]
        assert all(a < b for a, b in zip(raw, raw[1:])), f"raw eps {raw}"
        for w in (4, 5, 6):
            assert eps("nqs", w) <= eps("raw", w), (
                f"weight {w}: nqs {eps('nqs', w)} raw {eps('raw', w)}"
            )


class TestCriterion14Determinism:
    def _digests(self, outdir):
        import hashlib
        skip = {cli.MANIFEST_NAME, cli.CONFIG_ECHO_NAME}
        return {
            p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(Path(outdir).rglob("*"))
            if p.is_file() and p.name not in skip
        }

    def test_all_subcommands_reproduce_bytes(self, tmp_path):
        gen_args = ["generate", "--state", "ghz:3", "--ensemble", "clifford",
                    "--n", 80, "--seed", 21]
        run_cli(gen_args + ["--out", tmp_path / "g1"])
        run_cli(gen_args + ["--out", tmp_path / "g2"])
        assert self._digests(tmp_path / "g1") == self._digests(tmp_path / "g2")

        train_args = ["train", "--dataset", tmp_path / "g1" / "shadows.txt",
                      "--seed", 22, "--trials", 2, "--epochs", 2,
                      "--truth", "ghz:3"]
        run_cli(train_args + ["--out", tmp_path / "t1"])
        run_cli(train_args + ["--out", tmp_path / "t2"])
        assert self._digests(tmp_path / "t1") == self._digests(tmp_path / "t2")

        eval_args = ["evaluate", "--checkpoint", tmp_path / "t1" / "best.ckpt",
                     "--truth", "ghz:3", "--seed", 23,
                     "--dataset", tmp_path / "g1" / "shadows.txt"]
        run_cli(eval_args + ["--out", tmp_path / "e1"])
        run_cli(eval_args + ["--out", tmp_path / "e2"])
        assert self._digests(tmp_path / "e1") == self._digests(tmp_path / "e2")

        study_args = ["study", "kl", "--qubits", "2", "--shadows", "120",
                      "--instances", 3, "--seed", 24]
        run_cli(study_args + ["--out", tmp_path / "s1"])
        run_cli(study_args + ["--out", tmp_path / "s2"])
        assert self._digests(tmp_path / "s1") == self._digests(tmp_path / "s2")
