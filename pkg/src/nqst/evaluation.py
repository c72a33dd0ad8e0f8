"""Dense state metrics and the three study drivers behind the report CSVs.

Everything here runs at desk scale: exact density matrices up to ten
qubits, studies that loop over instances and emit flat CSV tables.
"""

from dataclasses import dataclass, field

import numpy as np

from . import model as md
from . import shadows as sh
from . import stabilizer as sb
from . import training as tr
from .shadows import DenseOperator, WeightedStabilizerSet

FIDELITY_TOL = 1e-9
KL_CLAMP = 1e-12

_H1 = np.array([[1.0, 1.0], [1.0, -1.0]], dtype=complex) / np.sqrt(2.0)
# control is the first (more significant) factor of the pair
_CNOT4 = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


@dataclass
class StudyReport:
    """Flat table of study results plus the metadata needed to rerun it."""

    study: str
    columns: tuple
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.columns = tuple(self.columns)
        if not self.rows:
            raise ValueError("a study report needs at least one row")
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError("row width does not match the column list")
        for j, name in enumerate(self.columns):
            if not name.endswith("std"):
                continue
            for row in self.rows:
                if row[j] is not None and row[j] < 0:
                    raise ValueError("negative standard deviation")

    def to_csv(self, path):
        lines = [f"# study={self.study}"]
        for key in sorted(self.metadata):
            lines.append(f"# {key}={self.metadata[key]}")
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(_cell(x) for x in row))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


@dataclass
class NoisyGhzTruth:
    n: int
    p: float
    rho: DenseOperator

    def __post_init__(self):
        mat = self.rho.mat
        if abs(np.trace(mat) - 1.0) > 1e-10:
            raise ValueError("truth state must have unit trace")
        if np.min(np.linalg.eigvalsh(mat)) < -1e-10:
            raise ValueError("truth state must be positive semidefinite")


def _pair_block(mat, n, q0, q1):
    """View rho with the (q0, q1) ket/bra axes pulled into leading 4-blocks."""
    t = mat.reshape((2,) * (2 * n))
    ket = [q0, q1] + [q for q in range(n) if q not in (q0, q1)]
    perm = ket + [n + q for q in ket]
    rest = 1 << (n - 2)
    return np.transpose(t, perm).reshape(4, rest, 4, rest), perm


def _unblock(block, n, perm):
    t = block.reshape((2,) * (2 * n))
    return np.transpose(t, np.argsort(perm)).reshape(1 << n, 1 << n)


def _apply_pair_unitary(mat, n, q0, q1, u4):
    block, perm = _pair_block(mat, n, q0, q1)
    out = np.einsum("ab,bicj,dc->aidj", u4, block, u4.conj())
    return _unblock(out, n, perm)


def _depolarize_pair(mat, n, q0, q1, p):
    lam = 16.0 * p / 15.0
    block, perm = _pair_block(mat, n, q0, q1)
    rest = np.einsum("aiaj->ij", block)
    mixed = np.einsum("ac,ij->aicj", np.eye(4, dtype=complex) / 4.0, rest)
    return _unblock((1.0 - lam) * block + lam * mixed, n, perm)


def exact_noisy_ghz(n, p):
    """Dense GHZ preparation: H on qubit 0, then a CNOT chain where every
    CNOT is followed by two-qubit depolarization of strength p on its pair.
    """
    if not 1 <= n <= 10:
        raise ValueError("dense truth limited to 10 qubits")
    if not 0.0 <= p <= 1.0:
        raise ValueError("noise strength must lie in [0, 1]")
    dim = 1 << n
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    u = np.kron(_H1, np.eye(dim // 2, dtype=complex))
    rho = u @ rho @ u.conj().T
    for q in range(n - 1):
        rho = _apply_pair_unitary(rho, n, q, q + 1, _CNOT4)
        if p > 0.0:
            rho = _depolarize_pair(rho, n, q, q + 1, p)
    return NoisyGhzTruth(n, p, DenseOperator(n, rho))


def fidelity_pure(truth, rho):
    """<psi| rho |psi>; clamped into [0, 1] only if the excess is tiny."""
    vec = np.asarray(truth, dtype=complex).ravel()
    if vec.size != rho.mat.shape[0]:
        raise ValueError("target vector does not match operator dimension")
    f = float(np.real(np.vdot(vec, rho.mat @ vec)))
    if f < -FIDELITY_TOL or f > 1.0 + FIDELITY_TOL:
        raise ValueError(f"fidelity {f} is outside [0, 1] beyond tolerance")
    return min(max(f, 0.0), 1.0)


def trace_distance(a, b):
    if a.n != b.n:
        raise ValueError("operator dimensions differ")
    if not a.is_hermitian() or not b.is_hermitian():
        raise ValueError("trace distance needs hermitian operators")
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(a.mat - b.mat))))


def purity(rho):
    """Tr(rho^2), returned unclamped so unphysical estimators show up as-is."""
    return float(np.real(np.trace(rho.mat @ rho.mat)))


def shadow_purity(dataset):
    """Unbiased purity estimate from a shadow dataset, pairs of snapshots.

    Mean of Tr(rho_i rho_j) over distinct pairs; unlike Tr(rho-bar^2),
    which is a squared norm and never negative, this estimate is allowed
    to fall below zero (or above one) and is returned unclamped.
    """
    n_records = len(dataset)
    if n_records < 2:
        raise ValueError("pair estimate needs at least two snapshots")
    n = dataset.n
    # per-record self overlap Tr(rho_i^2) is a constant of the ensemble
    if dataset.ensemble == "pauli":
        self_term = 5.0**n
    else:
        self_term = 4.0**n + 2.0**n - 1.0
    mean_sq = purity(sh.shadow_state(dataset))
    return (n_records * mean_sq - self_term) / (n_records - 1)


def purity_swap_mc(params, config, n_pairs, rng):
    """Swap-operator purity estimate from paired model samples.

    Without ancillas the state is pure, so the exact value 1.0 is returned
    and no samples are drawn.
    """
    if config.n_anc == 0:
        return 1.0
    rows = md.sample(params, config, rng, batch=2 * n_pairs)
    a, b = rows[:n_pairs], rows[n_pairs:]
    k = config.n_phys
    cross_ab = np.concatenate([a[:, :k], b[:, k:]], axis=1)
    cross_ba = np.concatenate([b[:, :k], a[:, k:]], axis=1)
    num = md.psi_values(params, config, cross_ab) * md.psi_values(params, config, cross_ba)
    den = md.psi_values(params, config, a) * md.psi_values(params, config, b)
    return float(np.mean((num / den).real))


def kl_divergence(p, q):
    """KL(p || q) over stabilizer sets, matching states by canonical key."""
    q_index = {st.key(): w for st, w in zip(q.states, q.weights)}
    matched = 0
    missing = 0
    total = 0.0
    for st, w in zip(p.states, p.weights):
        if w <= 0.0:
            continue
        qw = q_index.get(st.key())
        if qw is None:
            missing += 1
            continue
        matched += 1
        total += w * (np.log(w) - np.log(max(qw, KL_CLAMP)))
    if matched == 0:
        raise ValueError("the two sets share no states")
    if missing:
        raise ValueError(f"{missing} states of p are missing from q")
    return float(total)


def _random_pure_target(n, rng):
    return sb.StabilizerState.zero(n).apply(sb.random_clifford(n, rng))


def _restricted_data_distribution(target, dist):
    """p^data over the observed distinct states: weights ~ |<phi|target>|^2."""
    w = sb.abs2_matrix_states([target], dist.states)[0]
    total = float(w.sum())
    if total <= 0.0:
        raise sh.DegenerateDatasetError("target has no weight on the dataset")
    return WeightedStabilizerSet(dist.states, w / total)


def study_kl(qubits, shadow_counts, ensembles, rng, instances=32, targets=None):
    """KL of the shadow and empirical weights against the data distribution.

    One random pure stabilizer target per instance unless `targets`
    supplies them as {n: [state, ...]}.
    """
    rows = []
    for n in qubits:
        for ensemble in ensembles:
            for count in shadow_counts:
                kl_sh = []
                kl_emp = []
                for i in range(instances):
                    if targets is not None:
                        target = targets[n][i]
                    else:
                        target = _random_pure_target(n, rng)
                    ds = sh.acquire_shadows(
                        sh.FixedPreparation(target), ensemble, count, rng
                    )
                    p_emp = sh.empirical_distribution(ds)
                    p_sh = sh.normalized_shadow_weights(ds)
                    p_data = _restricted_data_distribution(target, p_emp)
                    kl_emp.append(kl_divergence(p_data, p_emp))
                    kl_sh.append(kl_divergence(p_data, p_sh))
                for ref, vals in (("shadow", kl_sh), ("empirical", kl_emp)):
                    rows.append(
                        (ensemble, n, count, ref,
                         float(np.mean(vals)), float(np.std(vals)))
                    )
    return StudyReport(
        study="kl",
        columns=("ensemble", "qubits", "shadows", "reference", "kl_mean", "kl_std"),
        rows=rows,
        metadata={
            "instances": instances,
            "qubits": " ".join(str(n) for n in qubits),
            "shadow_counts": " ".join(str(c) for c in shadow_counts),
            "ensembles": " ".join(ensembles),
        },
    )


def _gradient_angle(g_est, g_ref):
    """Angle between gradient vectors in degrees; None when undefined."""
    na = float(np.linalg.norm(g_est))
    nb = float(np.linalg.norm(g_ref))
    if na == 0.0 or nb == 0.0:
        return None
    c = float(np.dot(g_est, g_ref)) / (na * nb)
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def _mean_std(vals):
    known = [v for v in vals if v is not None]
    if not known:
        return None, None
    return float(np.mean(known)), float(np.std(known))


def study_gradient_angle(dataset, model_config, rng, train_config=None):
    """Angles between MC-estimated and exact gradients along an exact run.

    The model trains on the exact gradient; at every minibatch the NS and
    SS estimates of the same gradient are compared against it, and once
    per epoch the full-batch gradients are compared too.
    """
    if model_config.n_total > 4:
        raise ValueError("exact gradients are only tractable for n <= 4")
    cfg = train_config or tr.TrainConfig()
    if cfg.loss == tr.LossKind.SHADOW_CE:
        items, weights = tr._sce_weighted_set(dataset)
    else:
        tr._check_compat(cfg.loss, dataset)
        items = [sh.snapshot_state(rec) for rec in dataset.records()]
        weights = None
    n_items = len(items)
    params = md.init(model_config)
    adam = tr.AdamState.zeros(params.size)
    est_rng = {
        tr.SamplerKind.NS: np.random.default_rng(rng.integers(0, 2**63)),
        tr.SamplerKind.SS: np.random.default_rng(rng.integers(0, 2**63)),
    }

    def batch_grad(sel, sampler, step_rng):
        if weights is not None:
            batch = [(items[i], weights[i]) for i in sel]
            scale = n_items / len(sel)
        else:
            batch = [(items[i], 1.0) for i in sel]
            scale = 1.0 / len(sel)
        _, grad, _ = tr.loss_and_grad(
            params, model_config, batch, cfg.loss, sampler,
            cfg.mc_samples, step_rng, scale=scale,
        )
        return grad

    rows = []
    full_sel = np.arange(n_items)
    for epoch in range(cfg.epochs):
        lr = tr.cosine_lr(epoch, cfg.epochs, cfg.initial_lr)
        if weights is not None:
            order = rng.choice(n_items, n_items, replace=False, p=weights)
        else:
            order = rng.permutation(n_items)
        per_batch = {tr.SamplerKind.NS: [], tr.SamplerKind.SS: []}
        for start in range(0, n_items, cfg.minibatch_size):
            sel = order[start : start + cfg.minibatch_size]
            g_exact = batch_grad(sel, tr.SamplerKind.EXACT, rng)
            for kind in (tr.SamplerKind.NS, tr.SamplerKind.SS):
                g_est = batch_grad(sel, kind, est_rng[kind])
                per_batch[kind].append(_gradient_angle(g_est, g_exact))
            params, adam = tr.adam_step(adam, params, g_exact, lr)
        g_exact_full = batch_grad(full_sel, tr.SamplerKind.EXACT, rng)
        for kind, label in ((tr.SamplerKind.NS, "ns"), (tr.SamplerKind.SS, "ss")):
            mean, std = _mean_std(per_batch[kind])
            rows.append((label, "minibatch", epoch, mean, std))
            g_est = batch_grad(full_sel, kind, est_rng[kind])
            rows.append((label, "full", epoch, _gradient_angle(g_est, g_exact_full), 0.0))
    return StudyReport(
        study="gradient-angle",
        columns=("estimator", "scope", "epoch", "angle_mean", "angle_std"),
        rows=rows,
        metadata={
            "angle_unit": "degrees",
            "loss": cfg.loss.name,
            "epochs": cfg.epochs,
            "minibatch_size": cfg.minibatch_size,
            "mc_samples": cfg.mc_samples,
            "dataset_size": len(dataset),
            "qubits": model_config.n_phys,
        },
    )


def _pauli_expectation(op_dense, rho_mat):
    return float(np.real(np.einsum("ij,ji->", op_dense, rho_mat)))


def study_pauli_prediction(truth, dataset, params, config, n_strings, rng,
                           alphabet="IXYZ"):
    """Observable errors of raw shadow, projected shadow, and model estimates.

    Random Pauli strings draw each single-qubit factor uniformly from
    `alphabet`; errors are grouped by Pauli weight, and each estimator's
    mean error-over-sigma ratio uses the raw shadow's standard error
    (strings with zero sigma are skipped there).
    """
    letters = list(dict.fromkeys(alphabet.upper()))
    if not letters or any(ch not in "IXYZ" for ch in letters):
        raise ValueError("alphabet must be a subset of IXYZ")
    n = truth.n
    rho_true = truth.rho.mat
    rho_proj = sh.simplex_project(sh.shadow_state(dataset)).mat
    rho_model = md.density_matrix(params, config).mat
    eps = {}
    ratios = {"raw": [], "projected": [], "nqs": []}
    for _ in range(n_strings):
        label = "".join(letters[i] for i in rng.integers(0, len(letters), n))
        op = sb.PauliOperator.from_label(label)
        dense = op.to_dense()
        true_val = _pauli_expectation(dense, rho_true)
        vals = sh.pauli_record_estimates(dataset, op)
        sigma = float(vals.std(ddof=1)) / np.sqrt(len(vals))
        errors = {
            "raw": abs(float(vals.mean()) - true_val),
            "projected": abs(_pauli_expectation(dense, rho_proj) - true_val),
            "nqs": abs(_pauli_expectation(dense, rho_model) - true_val),
        }
        for name, e in errors.items():
            eps.setdefault((name, op.weight), []).append(e)
            if sigma > 0.0:
                ratios[name].append(e / sigma)
    rows = []
    for name in ("raw", "projected", "nqs"):
        for weight in sorted(w for (nm, w) in eps if nm == name):
            vals = eps[(name, weight)]
            rows.append(
                (name, weight, float(np.mean(vals)), float(np.std(vals)), len(vals))
            )
    metadata = {
        "alphabet": "".join(letters),
        "n_strings": n_strings,
        "dataset_size": len(dataset),
        "qubits": n,
        "noise_p": truth.p,
    }
    for name, vals in ratios.items():
        metadata[f"ratio_{name}"] = f"{np.mean(vals):.10g}" if vals else ""
    return StudyReport(
        study="pauli-prediction",
        columns=("estimator", "weight", "eps_mean", "eps_std", "count"),
        rows=rows,
        metadata=metadata,
    )


def density_to_csv(path, op):
    """Dense operator dump as row,col,re,im lines."""
    dim = op.mat.shape[0]
    lines = ["row,col,re,im"]
    for r in range(dim):
        for c in range(dim):
            z = op.mat[r, c]
            lines.append(f"{r},{c},{z.real:.10g},{z.imag:.10g}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
