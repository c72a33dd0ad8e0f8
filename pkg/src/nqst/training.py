"""Losses, Monte Carlo overlap estimators, and the optimization loop.

Overlap estimators share one convention: an estimate is a sum of
per-basis-state complex contributions c_s with value sum(c_s) and
parameter gradient sum(c_s * (grad log|psi|_s - i grad phase_s)).
Exact enumeration, sampling from the model (NS), and sampling from the
stabilizer (SS) differ only in how the c_s are built, which lets one
batched forward/backward serve a whole minibatch after deduplicating
the visited basis states.
"""

import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from . import model as md
from .shadows import (
    SnapshotRecord,
    WeightedStabilizerSet,
    normalized_shadow_weights,
    snapshot_state,
)


class ConfigError(ValueError):
    pass


class LossKind(Enum):
    INF_CLIFFORD = "inf-clifford"
    INF_PAULI = "inf-pauli"
    EMPIRICAL_CE = "ece"
    SHADOW_CE = "sce"


class SamplerKind(Enum):
    NS = "ns"
    SS = "ss"
    EXACT = "exact"


EXACT_MAX_BITS = 10
ENUMERATION_MAX_BITS = 13
P_CLAMP = 1e-12

CE_KINDS = (LossKind.EMPIRICAL_CE, LossKind.SHADOW_CE)
INF_KINDS = (LossKind.INF_CLIFFORD, LossKind.INF_PAULI)


@dataclass
class TrainConfig:
    epochs: int = 50
    initial_lr: float = 0.01
    minibatch_size: int = 100
    mc_samples: int = 500
    early_stop_patience: int = 10
    seed: int = 0
    loss: LossKind = LossKind.SHADOW_CE
    sampler: SamplerKind = SamplerKind.SS
    val_fraction: float = 0.0

    def __post_init__(self):
        if self.epochs < 0 or self.minibatch_size < 1 or self.mc_samples < 1:
            raise ConfigError("counts must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigError("val_fraction must lie in [0, 1)")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    BETA1 = 0.9
    BETA2 = 0.999
    EPS = 1e-8

    @classmethod
    def zeros(cls, size):
        return cls(np.zeros(size), np.zeros(size))


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    loss: float
    infidelity: float
    seconds: float


@dataclass
class TrainRun:
    records: list
    params: md.NqsParameters
    stop_reason: str
    best_epoch: int = -1
    clamp_events: int = 0
    val_losses: list = field(default_factory=list)

    def to_csv(self, path):
        lines = ["epoch,lr,loss,infidelity,seconds"]
        for r in self.records:
            lines.append(
                f"{r.epoch},{r.lr:.10g},{r.loss:.10g},{r.infidelity:.10g},{r.seconds:.3f}"
            )
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _pack_rows(bits):
    shifts = (np.uint64(1) << np.arange(bits.shape[1], dtype=np.uint64))
    return (bits.astype(np.uint64) * shifts).sum(axis=1)


def _code_rows(codes, n):
    shifts = np.arange(n, dtype=np.uint64)
    return ((codes[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)


def _phi_sample(phi, m, rng):
    """Multinomial draw from |phi|^2 (uniform over the support)."""
    codes, amps = phi.support()
    picks = rng.integers(0, codes.size, m)
    idx, counts = np.unique(picks, return_counts=True)
    return codes[idx], amps[idx], counts


def _model_distribution(params, config):
    p = np.abs(md.dense_wavefunction(params, config)) ** 2
    return p / p.sum()


def _model_sample(params, config, m, rng, dist=None):
    """Joint-code multinomial draw from p; enumeration at small widths."""
    n = config.n_total
    if n <= ENUMERATION_MAX_BITS:
        if dist is None:
            dist = _model_distribution(params, config)
        counts = rng.multinomial(m, dist)
        nz = counts.nonzero()[0]
        return _pack_rows(md.all_bit_rows(n)[nz]), counts[nz]
    bits = md.sample(params, config, rng, batch=m)
    codes, counts = np.unique(_pack_rows(bits), return_counts=True)
    return codes, counts


class _Estimation:
    """Deduplicated contribution assembly for a set of overlap terms.

    Each term j contributes rows (joint codes), per-row complex bases,
    and a kind: bases multiply conj(psi) (exact/SS) or 1/psi (NS).
    """

    def __init__(self):
        self.codes = []
        self.bases = []
        self.kinds = []
        self.terms = []

    def add_term(self, codes, bases, kind):
        self.terms.append((len(self.codes), kind))
        self.codes.append(codes)
        self.bases.append(bases)
        self.kinds.append(kind)

    def run(self, params, config, tape=None):
        all_codes = np.concatenate(self.codes) if self.codes else np.zeros(0, np.uint64)
        distinct, inverse = np.unique(all_codes, return_inverse=True)
        rows = _code_rows(distinct, config.n_total)
        lm, ph = md.log_psi_batch(params, config, rows, tape)
        psi = np.exp(lm.data + 1j * ph.data)
        values = []
        contribs = []
        offset = 0
        for codes, bases, kind in zip(self.codes, self.bases, self.kinds):
            sl = inverse[offset : offset + codes.size]
            offset += codes.size
            pv = psi[sl]
            c = bases * (pv.conj() if kind == "conj" else 1.0 / pv)
            values.append(c.sum())
            contribs.append((sl, c))
        return distinct, values, contribs


def overlap(params, config, phi, sampler, mc_samples=500, rng=None):
    """<psi_lambda | phi> for a stabilizer phi over all model bits."""
    if phi.n != config.n_total:
        raise ValueError("phi width must match the model's total bit count")
    if mc_samples < 1:
        raise ValueError("mc_samples must be positive")
    if sampler == SamplerKind.EXACT:
        if config.n_total > EXACT_MAX_BITS:
            raise ValueError("exact summation limited to 10 bits")
        codes, amps = phi.support()
        psi = md.psi_values(params, config, _code_rows(codes, config.n_total))
        return complex(np.sum(psi.conj() * amps))
    if rng is None:
        raise ValueError("sampling estimators need an rng")
    if sampler == SamplerKind.SS:
        codes, amps, counts = _phi_sample(phi, mc_samples, rng)
        psi = md.psi_values(params, config, _code_rows(codes, config.n_total))
        return complex(np.sum(counts * psi.conj() / amps.conj()) / mc_samples)
    if sampler == SamplerKind.NS:
        codes, counts = _model_sample(params, config, mc_samples, rng)
        phi_vals = phi.amplitudes(codes)
        psi = md.psi_values(params, config, _code_rows(codes, config.n_total))
        return complex(np.sum(counts * phi_vals / psi) / mc_samples)
    raise ValueError(f"unknown sampler {sampler}")


def overlap_grad_ss(params, config, phi, mc_samples, rng):
    """SS overlap together with the gradients of its real and imaginary parts.

    The same sample set feeds the value and the gradient; a single
    complex-seeded backward produces both gradient parts.
    """
    if phi.n != config.n_total:
        raise ValueError("phi width must match the model's total bit count")
    codes, amps, counts = _phi_sample(phi, mc_samples, rng)
    est = _Estimation()
    est.add_term(codes, counts / (mc_samples * amps.conj()), "conj")
    tape = ad.Tape()
    distinct, values, contribs = est.run(params, config, tape)
    alpha = np.zeros(distinct.size, dtype=np.complex128)
    sl, c = contribs[0]
    np.add.at(alpha, sl, c)
    grad = md.gradient(tape, alpha, -1j * alpha)
    return complex(values[0]), (grad.real, grad.imag)


def pauli_snapshot_expansion(record):
    """All product-state terms of one Pauli snapshot's inverse map.

    Term (b, c) keeps the rotated eigenstate on qubits where b is hot and
    places computational bit c_k elsewhere; its signed weight is
    (-1)^(n-|b|) * 3^|b|.  Summing weight * |phi><phi| over all terms
    reconstructs the inverse map exactly.
    """
    if record.ensemble != "pauli":
        raise ValueError("expansion applies to Pauli records")
    n = len(record.outcome)
    if n > 8:
        raise ValueError("expansion limited to 8 qubits (3^n terms)")
    z_basis = 2
    terms = []
    for b in range(1 << n):
        hot = [k for k in range(n) if (b >> k) & 1]
        cold = [k for k in range(n) if not (b >> k) & 1]
        weight = float((-1) ** len(cold) * 3 ** len(hot))
        for c in range(1 << len(cold)):
            bases = np.full(n, z_basis, dtype=np.uint8)
            outcomes = np.zeros(n, dtype=np.uint8)
            for k in hot:
                bases[k] = record.unitary[k]
                outcomes[k] = record.outcome[k]
            for j, k in enumerate(cold):
                outcomes[k] = (c >> j) & 1
            state = snapshot_state(SnapshotRecord("pauli", bases, outcomes))
            terms.append((state, weight))
    return terms


def _add_phi_terms(est, phi, j, anc_offsets, sampler, mc_samples, rng, model_dist, params, config):
    """Queue the overlap terms of one phi (one per ancilla pattern)."""
    if sampler == SamplerKind.EXACT:
        codes, amps = phi.support()
        for e, off in enumerate(anc_offsets):
            est.add_term(codes + off, amps.copy(), "conj")
        return len(anc_offsets)
    if sampler == SamplerKind.SS:
        for e, off in enumerate(anc_offsets):
            codes, amps, counts = _phi_sample(phi, mc_samples, rng)
            est.add_term(codes + off, counts / (mc_samples * amps.conj()), "conj")
        return len(anc_offsets)
    # NS: one joint draw serves every ancilla pattern of this phi
    codes, counts = _model_sample(params, config, mc_samples, rng, model_dist)
    n_phys = config.n_phys
    mask = (np.uint64(1) << np.uint64(n_phys)) - np.uint64(1)
    phys = codes & mask
    anc = codes & ~mask
    added = 0
    for off in anc_offsets:
        match = anc == off
        sub = phys[match]
        phi_vals = phi.amplitudes(sub) if sub.size else np.zeros(0, complex)
        est.add_term(codes[match], counts[match] * phi_vals / mc_samples, "inv")
        added += 1
    return added


def loss_and_grad(
    params,
    config,
    batch,
    loss,
    sampler,
    mc_samples=500,
    rng=None,
    scale=None,
    with_grad=True,
):
    """Loss and flat gradient over a minibatch of (phi, weight) pairs.

    Infidelity kinds use f(p) = -p, cross-entropy kinds f(p) = -ln p,
    with L = scale * sum_j w_j f(p_j).  For a purified model p_j sums
    |<phi,anc|psi>|^2 over all ancilla patterns.  Cross-entropy p values
    are clamped at 1e-12 with a zero gradient and a diagnostic count.
    """
    if not batch:
        raise ValueError("empty minibatch")
    if loss in INF_KINDS and config.n_anc:
        raise ConfigError("infidelity losses are defined for pure models only")
    if sampler != SamplerKind.EXACT and rng is None:
        raise ValueError("sampling estimators need an rng")
    if sampler == SamplerKind.EXACT and config.n_total > EXACT_MAX_BITS:
        raise ValueError("exact summation limited to 10 bits")
    if scale is None:
        scale = 1.0 / len(batch)
    n_phys = config.n_phys
    anc_rows = (
        md.all_bit_rows(config.n_anc) if config.n_anc else np.zeros((1, 0), np.uint8)
    )
    anc_offsets = _pack_rows(anc_rows) << np.uint64(n_phys) if config.n_anc else np.array(
        [0], dtype=np.uint64
    )
    model_dist = None
    if sampler == SamplerKind.NS and config.n_total <= ENUMERATION_MAX_BITS:
        model_dist = _model_distribution(params, config)
    est = _Estimation()
    spans = []
    for j, (phi, _) in enumerate(batch):
        if phi.n != n_phys:
            raise ValueError("phi width must match the physical qubit count")
        start = len(est.terms)
        _add_phi_terms(
            est, phi, j, anc_offsets, sampler, mc_samples, rng, model_dist, params, config
        )
        spans.append((start, len(est.terms)))
    tape = ad.Tape() if with_grad else None
    distinct, values, contribs = est.run(params, config, tape)
    values = np.asarray(values)
    p = np.array([np.sum(np.abs(values[a:b]) ** 2) for a, b in spans])
    weights = np.array([w for _, w in batch], dtype=np.float64)
    clamped = 0
    if loss in CE_KINDS:
        low = p < P_CLAMP
        clamped = int(np.count_nonzero(low))
        total = scale * float(np.sum(weights * -np.log(np.maximum(p, P_CLAMP))))
        dfdp = np.where(low, 0.0, -1.0 / np.maximum(p, P_CLAMP))
    else:
        total = scale * float(np.sum(weights * -p))
        dfdp = np.full(p.size, -1.0)
    info = {"clamped": clamped, "p": p}
    if not with_grad:
        return total, None, info
    alpha = np.zeros(distinct.size, dtype=np.complex128)
    for j, (a, b) in enumerate(spans):
        kappa = scale * weights[j] * dfdp[j]
        for t in range(a, b):
            sl, c = contribs[t]
            np.add.at(alpha, sl, kappa * np.conj(values[t]) * c)
    grad = md.gradient(tape, 2 * alpha.real, 2 * alpha.imag)
    return total, grad, info


def adam_step(state, params, grad, lr):
    if not np.all(np.isfinite(grad)):
        raise ValueError("non-finite gradient")
    state.t += 1
    state.m = AdamState.BETA1 * state.m + (1 - AdamState.BETA1) * grad
    state.v = AdamState.BETA2 * state.v + (1 - AdamState.BETA2) * grad * grad
    mhat = state.m / (1 - AdamState.BETA1 ** state.t)
    vhat = state.v / (1 - AdamState.BETA2 ** state.t)
    params.flat -= lr * mhat / (np.sqrt(vhat) + AdamState.EPS)
    return params, state


def cosine_lr(epoch, total_epochs, initial_lr):
    return initial_lr * 0.5 * (1.0 + np.cos(np.pi * epoch / total_epochs))


def _dataset_states(dataset):
    return [snapshot_state(rec) for rec in dataset.records()]


def _check_compat(loss, dataset):
    if loss == LossKind.INF_CLIFFORD and dataset.ensemble != "clifford":
        raise ConfigError("clifford infidelity loss needs a clifford dataset")
    if loss == LossKind.INF_PAULI and dataset.ensemble != "pauli":
        raise ConfigError("pauli infidelity loss needs a pauli dataset")


def _infidelity(params, config, truth_vec):
    psi = md.dense_wavefunction(params, config)
    if config.n_anc:
        a = psi.reshape(1 << config.n_phys, 1 << config.n_anc)
        return 1.0 - float(np.sum(np.abs(truth_vec.conj() @ a) ** 2))
    return 1.0 - abs(np.vdot(truth_vec, psi)) ** 2


def _sce_weighted_set(dataset):
    ws = normalized_shadow_weights(dataset)
    keep = ws.weights > 0
    states = [s for s, k in zip(ws.states, keep) if k]
    weights = ws.weights[keep] / ws.weights[keep].sum()
    return states, weights


def train(dataset, model_config, train_config, truth=None, rng=None):
    """One optimization trial; returns the TrainRun with per-epoch records.

    `truth` is an optional dense pure target vector over the physical
    qubits; infidelity 1 - <truth|rho|truth> is logged when present.
    When val_fraction > 0 the dataset is split, validation loss drives
    early stopping, and the best-validation parameters are restored.
    """
    cfg = train_config
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    if isinstance(dataset, WeightedStabilizerSet):
        if cfg.loss != LossKind.SHADOW_CE:
            raise ConfigError("weighted sets are only usable with the shadow CE loss")
        if cfg.val_fraction > 0:
            raise ConfigError("validation split needs a raw dataset")
        train_ds, val_ds = dataset, None
    else:
        _check_compat(cfg.loss, dataset)
        if cfg.val_fraction > 0:
            order = rng.permutation(len(dataset))
            n_val = int(round(cfg.val_fraction * len(dataset)))
            if n_val < 1 or n_val >= len(dataset):
                raise ConfigError("validation split leaves an empty part")
            val_ds = dataset.subset(order[:n_val])
            train_ds = dataset.subset(order[n_val:])
        else:
            train_ds, val_ds = dataset, None

    params = md.init(model_config)
    adam = AdamState.zeros(params.size)

    def prepare(ds):
        if cfg.loss == LossKind.SHADOW_CE:
            if isinstance(ds, WeightedStabilizerSet):
                keep = ds.weights > 0
                states = [s for s, k in zip(ds.states, keep) if k]
                return states, ds.weights[keep] / ds.weights[keep].sum(), None
            states, weights = _sce_weighted_set(ds)
            return states, weights, None
        if cfg.loss == LossKind.INF_PAULI:
            return ds.records(), None, "expand"
        return _dataset_states(ds), None, None

    items, item_weights, mode = prepare(train_ds)
    val_pack = prepare(val_ds) if val_ds is not None else None

    def batch_loss(batch_items, batch_weights, n_items, step_rng, with_grad):
        if mode == "expand":
            terms = []
            for rec in batch_items:
                terms.extend(pauli_snapshot_expansion(rec))
            batch = terms
            scale = 1.0 / len(batch_items)
        elif cfg.loss == LossKind.SHADOW_CE:
            batch = list(zip(batch_items, batch_weights))
            scale = n_items / len(batch_items)
        else:
            batch = [(phi, 1.0) for phi in batch_items]
            scale = 1.0 / len(batch_items)
        return loss_and_grad(
            params,
            model_config,
            batch,
            cfg.loss,
            cfg.sampler,
            cfg.mc_samples,
            step_rng,
            scale=scale,
            with_grad=with_grad,
        )

    def validation_loss():
        states, weights, vmode = val_pack
        vrng = np.random.default_rng(rng.integers(0, 2**63))
        return batch_loss_for(states, weights, vrng, vmode)[0]

    def batch_loss_for(batch_items, batch_weights, step_rng, vmode):
        if vmode == "expand":
            terms = []
            for rec in batch_items:
                terms.extend(pauli_snapshot_expansion(rec))
            return loss_and_grad(
                params, model_config, terms, cfg.loss, cfg.sampler, cfg.mc_samples,
                step_rng, scale=1.0 / len(batch_items), with_grad=False,
            )
        if batch_weights is not None:
            batch = list(zip(batch_items, batch_weights))
            scale = 1.0
        else:
            batch = [(phi, 1.0) for phi in batch_items]
            scale = 1.0 / len(batch_items)
        return loss_and_grad(
            params, model_config, batch, cfg.loss, cfg.sampler, cfg.mc_samples,
            step_rng, scale=scale, with_grad=False,
        )

    records = []
    val_losses = []
    clamp_total = 0
    best_val = np.inf
    best_params = None
    best_epoch = -1
    waited = 0
    stop_reason = "completed"
    n_items = len(items)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        lr = cosine_lr(epoch, cfg.epochs, cfg.initial_lr)
        if cfg.loss == LossKind.SHADOW_CE:
            order = rng.choice(n_items, n_items, replace=False, p=item_weights)
        else:
            order = rng.permutation(n_items)
        losses = []
        for start in range(0, n_items, cfg.minibatch_size):
            sel = order[start : start + cfg.minibatch_size]
            bi = [items[i] for i in sel]
            bw = item_weights[sel] if item_weights is not None else None
            loss, grad, info = batch_loss(bi, bw, n_items, rng, True)
            clamp_total += info["clamped"]
            params, adam = adam_step(adam, params, grad, lr)
            losses.append(loss)
        infid = _infidelity(params, model_config, truth) if truth is not None else np.nan
        seconds = time.perf_counter() - t0
        records.append(EpochRecord(epoch, float(lr), float(np.mean(losses)), infid, seconds))
        if val_pack is not None:
            vl = validation_loss()
            val_losses.append(vl)
            if vl < best_val - 1e-12:
                best_val = vl
                best_params = params.copy()
                best_epoch = epoch
                waited = 0
            else:
                waited += 1
                if waited >= cfg.early_stop_patience:
                    stop_reason = f"early-stop at epoch {epoch}"
                    break
    if best_params is not None:
        params = best_params
    return TrainRun(
        records=records,
        params=params,
        stop_reason=stop_reason,
        best_epoch=best_epoch,
        clamp_events=clamp_total,
        val_losses=val_losses,
    )
