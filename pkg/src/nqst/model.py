"""Autoregressive transformer wavefunction over bit sequences.

A sequence of n_phys physical bits (plus optional ancilla bits for the
purified mixed-state form) is modeled token by token with a causal
transformer.  Position k emits a 2-way softmax for the conditional
probability of bit k, so the joint p(s) is normalized by construction;
a linear head on positions 1..L accumulates the phase.  The amplitude
is psi(s) = sqrt(p(s)) * exp(i*phase(s)).
"""

import io
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .shadows import DenseOperator

START_TOKEN = 2
LOGIT_CLAMP = 30.0
DENSE_MAX_BITS = 20
PHASE_CONVENTION = "positionwise-sum"
CHECKPOINT_MAGIC = "NQSCKPT v1"


@dataclass(frozen=True)
class ModelConfig:
    n_phys: int
    n_anc: int = 0
    layers: int = 2
    embed_dim: int = 8
    heads: int = 4
    ff_dim: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.n_phys < 1:
            raise ValueError("n_phys must be positive")
        if not 0 <= self.n_anc <= self.n_phys:
            raise ValueError("n_anc must lie in [0, n_phys]")
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.embed_dim % self.heads:
            raise ValueError("embed_dim must be divisible by heads")
        if self.ff_dim < 1:
            raise ValueError("ff_dim must be positive")

    @property
    def n_total(self):
        return self.n_phys + self.n_anc

    @property
    def seq_len(self):
        return self.n_total + 1


def _layout(config):
    d, f = config.embed_dim, config.ff_dim
    shapes = [("tok_emb", (3, d)), ("pos_emb", (config.seq_len, d))]
    for i in range(config.layers):
        shapes += [
            (f"l{i}.ln1_g", (d,)),
            (f"l{i}.ln1_b", (d,)),
            (f"l{i}.w_qkv", (d, 3 * d)),
            (f"l{i}.b_qkv", (3 * d,)),
            (f"l{i}.w_out", (d, d)),
            (f"l{i}.b_out", (d,)),
            (f"l{i}.ln2_g", (d,)),
            (f"l{i}.ln2_b", (d,)),
            (f"l{i}.w_ff1", (d, f)),
            (f"l{i}.b_ff1", (f,)),
            (f"l{i}.w_ff2", (f, d)),
            (f"l{i}.b_ff2", (d,)),
        ]
    shapes += [
        ("ln_f_g", (d,)),
        ("ln_f_b", (d,)),
        ("w_prob", (d, 2)),
        ("b_prob", (2,)),
        ("w_phase", (d, 1)),
        ("b_phase", (1,)),
    ]
    layout = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        layout[name] = (offset, shape)
        offset += size
    return layout, offset


@dataclass
class NqsParameters:
    flat: np.ndarray
    layout: dict = field(repr=False)

    def view(self, name):
        offset, shape = self.layout[name]
        return self.flat[offset : offset + int(np.prod(shape))].reshape(shape)

    @property
    def size(self):
        return self.flat.size

    def copy(self):
        return NqsParameters(self.flat.copy(), self.layout)


def init(config, scale=0.02):
    layout, total = _layout(config)
    rng = np.random.default_rng(config.seed)
    flat = np.zeros(total)
    params = NqsParameters(flat, layout)
    for name, (offset, shape) in layout.items():
        size = int(np.prod(shape))
        if name.endswith(("_g",)):
            flat[offset : offset + size] = 1.0
        elif name.endswith(("_b", "b_qkv", "b_out", "b_ff1", "b_ff2", "b_prob", "b_phase")):
            pass
        elif name in ("tok_emb", "pos_emb"):
            # unit-scale embeddings: attention must be able to tell tokens
            # apart from the first step, otherwise the sampler locks onto
            # prefix-independent marginals before any correlation forms
            flat[offset : offset + size] = rng.normal(0.0, 1.0, size)
        else:
            flat[offset : offset + size] = rng.normal(0.0, scale, size)
    if not np.all(np.isfinite(flat)):
        raise ValueError("non-finite initialization")
    return params


@dataclass
class AmplitudeValue:
    log_magnitude: float
    phase: float

    @property
    def value(self):
        return np.exp(self.log_magnitude + 1j * self.phase)


def _param_vars(params, tape):
    return {name: ad.Var(params.view(name), tape) for name in params.layout}


def _causal_mask(t):
    mask = np.zeros((t, t))
    mask[np.triu_indices(t, k=1)] = -1e9
    return mask


def _hidden(v, config, tokens, tape):
    b, t = tokens.shape
    d, h = config.embed_dim, config.heads
    dh = d // h
    x = ad.add(ad.embedding(v["tok_emb"], tokens), ad.take(v["pos_emb"], np.s_[:t]))
    mask = _causal_mask(t)
    for i in range(config.layers):
        p = f"l{i}."
        xn = ad.layer_norm(x, v[p + "ln1_g"], v[p + "ln1_b"])
        qkv = ad.add(ad.matmul(xn, v[p + "w_qkv"]), v[p + "b_qkv"])
        q = ad.take(qkv, np.s_[:, :, 0:d])
        k = ad.take(qkv, np.s_[:, :, d : 2 * d])
        val = ad.take(qkv, np.s_[:, :, 2 * d : 3 * d])
        q = ad.transpose(ad.reshape(q, (b, t, h, dh)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(k, (b, t, h, dh)), (0, 2, 1, 3))
        val = ad.transpose(ad.reshape(val, (b, t, h, dh)), (0, 2, 1, 3))
        scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dh))
        attn = ad.softmax(ad.add(scores, mask))
        ctx = ad.reshape(ad.transpose(ad.matmul(attn, val), (0, 2, 1, 3)), (b, t, d))
        x = ad.add(x, ad.add(ad.matmul(ctx, v[p + "w_out"]), v[p + "b_out"]))
        xn = ad.layer_norm(x, v[p + "ln2_g"], v[p + "ln2_b"])
        ff = ad.tanh(ad.add(ad.matmul(xn, v[p + "w_ff1"]), v[p + "b_ff1"]))
        ff = ad.add(ad.matmul(ff, v[p + "w_ff2"]), v[p + "b_ff2"])
        x = ad.add(x, ff)
    return ad.layer_norm(x, v["ln_f_g"], v["ln_f_b"])


def _tokens(bits):
    b = bits.shape[0]
    start = np.full((b, 1), START_TOKEN, dtype=np.int64)
    return np.concatenate([start, bits.astype(np.int64)], axis=1)


def log_psi_batch(params, config, bits, tape=None):
    """log|psi| and phase for a batch of bit rows, shape (B, n_total).

    With a tape the two outputs are recorded for `gradient`.
    """
    bits = np.atleast_2d(np.asarray(bits, dtype=np.int64))
    if bits.shape[1] != config.n_total:
        raise ValueError("bit length does not match model")
    n = bits.shape[1]
    v = _param_vars(params, tape)
    h = _hidden(v, config, _tokens(bits), tape)
    logits = ad.clamp(
        ad.add(ad.matmul(ad.take(h, np.s_[:, :n, :]), v["w_prob"]), v["b_prob"]),
        -LOGIT_CLAMP,
        LOGIT_CLAMP,
    )
    logp = ad.gather_last(ad.log_softmax(logits), bits)
    log_magnitude = ad.mul(ad.sum_axis(logp, 1), 0.5)
    theta = ad.add(ad.matmul(ad.take(h, np.s_[:, 1:, :]), v["w_phase"]), v["b_phase"])
    phase = ad.sum_axis(ad.reshape(theta, (bits.shape[0], n)), 1)
    if tape is not None:
        tape.meta["vars"] = v
        tape.meta["layout"] = params.layout
        tape.meta["size"] = params.size
        tape.meta["outputs"] = (log_magnitude, phase)
    return log_magnitude, phase


def log_psi(params, config, bits, tape=None):
    lm, ph = log_psi_batch(params, config, np.asarray(bits)[None, :], tape)
    return AmplitudeValue(float(lm.data[0]), float(ph.data[0]))


def gradient(tape, d_log_magnitude, d_phase):
    """Flat parameter gradient from output adjoints.

    Seeds may be complex; the returned vector then carries the gradients
    of the real and imaginary parts in its real and imaginary parts.
    """
    lm, ph = tape.meta["outputs"]
    d_lm = np.broadcast_to(np.asarray(d_log_magnitude), lm.data.shape)
    d_ph = np.broadcast_to(np.asarray(d_phase), ph.data.shape)
    tape.backward([(lm, d_lm), (ph, d_ph)])
    v = tape.meta["vars"]
    dtype = np.result_type(np.float64, d_lm.dtype, d_ph.dtype)
    flat = np.zeros(tape.meta["size"], dtype=dtype)
    for name, (offset, shape) in tape.meta["layout"].items():
        g = v[name].grad
        if g is not None:
            flat[offset : offset + int(np.prod(shape))] = g.ravel()
    return flat


def psi_values(params, config, bits):
    lm, ph = log_psi_batch(params, config, bits)
    return np.exp(lm.data + 1j * ph.data)


def conditional_probs(params, config, bits):
    """p(bit_k = observed | prefix) for every position, shape (B, n_total)."""
    bits = np.atleast_2d(np.asarray(bits, dtype=np.int64))
    v = _param_vars(params, None)
    h = _hidden(v, config, _tokens(bits), None)
    logits = np.clip(
        h.data[:, : bits.shape[1], :] @ params.view("w_prob") + params.view("b_prob"),
        -LOGIT_CLAMP,
        LOGIT_CLAMP,
    )
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    probs = e / e.sum(axis=-1, keepdims=True)
    return np.take_along_axis(probs, bits[..., None], axis=-1)[..., 0]


def sample(params, config, rng, batch=1):
    """Exact ancestral samples from p, shape (batch, n_total) uint8."""
    n = config.n_total
    v = _param_vars(params, None)
    bits = np.zeros((batch, 0), dtype=np.int64)
    for k in range(n):
        h = _hidden(v, config, _tokens(bits), None)
        logits = np.clip(
            h.data[:, -1, :] @ params.view("w_prob") + params.view("b_prob"),
            -LOGIT_CLAMP,
            LOGIT_CLAMP,
        )
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        p1 = e[:, 1] / e.sum(axis=1)
        drawn = (rng.random(batch) < p1).astype(np.int64)
        bits = np.concatenate([bits, drawn[:, None]], axis=1)
    return bits.astype(np.uint8)


def all_bit_rows(n):
    """All length-n bit rows ordered by dense index (bit 0 most significant)."""
    idx = np.arange(1 << n, dtype=np.int64)
    shifts = np.arange(n - 1, -1, -1, dtype=np.int64)
    return ((idx[:, None] >> shifts[None, :]) & 1).astype(np.uint8)


def dense_wavefunction(params, config):
    if config.n_total > DENSE_MAX_BITS:
        raise ValueError("too many bits for dense enumeration")
    return psi_values(params, config, all_bit_rows(config.n_total))


def density_matrix(params, config):
    """Dense physical-qubit density matrix via the ancilla trace."""
    if config.n_phys > 10 or config.n_anc > 10:
        raise ValueError("density matrix limited to 10 physical and ancilla bits")
    psi = dense_wavefunction(params, config)
    a = psi.reshape(1 << config.n_phys, 1 << config.n_anc)
    return DenseOperator(config.n_phys, a @ a.conj().T)


def _phi_support(phi):
    return phi.support()


def _code_rows(codes, n):
    shifts = np.arange(n, dtype=np.uint64)
    return ((codes[:, None] >> shifts[None, :]) & np.uint64(1)).astype(np.uint8)


def rho_expectation(params, config, phi, mode="exact", mc_samples=500, rng=None):
    """<phi| rho |phi> for a stabilizer phi over the physical qubits."""
    if phi.n != config.n_phys:
        raise ValueError("phi must act on the physical qubits")
    codes, amps = _phi_support(phi)
    supp_bits = _code_rows(codes, config.n_phys)
    anc = all_bit_rows(config.n_anc) if config.n_anc else np.zeros((1, 0), dtype=np.uint8)
    if mode == "exact":
        if config.n_phys > 10:
            raise ValueError("exact mode limited to 10 physical bits")
        k, m = supp_bits.shape[0], anc.shape[0]
        rows = np.concatenate(
            [np.repeat(supp_bits, m, axis=0), np.tile(anc, (k, 1))], axis=1
        )
        psi = psi_values(params, config, rows).reshape(k, m)
        o = amps.conj() @ psi
        return float(np.sum(np.abs(o) ** 2))
    if mode != "mc":
        raise ValueError("mode must be exact or mc")
    if rng is None:
        raise ValueError("mc mode needs an rng")
    # Two independent sample sets per ancilla pattern make the product of
    # the two overlap estimates unbiased for |o|^2.
    total = 0.0
    amp_lookup = dict(zip(codes.tolist(), amps))
    for abits in anc:
        ests = []
        for _ in range(2):
            picks = rng.integers(0, codes.size, mc_samples)
            idx, counts = np.unique(picks, return_counts=True)
            rows = np.concatenate(
                [supp_bits[idx], np.tile(abits, (idx.size, 1))], axis=1
            )
            psi = psi_values(params, config, rows)
            phi_vals = amps[idx]
            ests.append(np.sum(counts * psi / phi_vals) / mc_samples)
        total += float((ests[0] * np.conj(ests[1])).real)
    return max(total, 0.0)


def save_checkpoint(path, params, config):
    buf = io.StringIO()
    buf.write(CHECKPOINT_MAGIC + "\n")
    for key in ("n_phys", "n_anc", "layers", "embed_dim", "heads", "ff_dim", "seed"):
        buf.write(f"{key}={getattr(config, key)}\n")
    buf.write(f"param_count={params.size}\n")
    buf.write(f"phase_convention={PHASE_CONVENTION}\n")
    buf.write("DATA\n")
    with open(path, "wb") as fh:
        fh.write(buf.getvalue().encode("ascii"))
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    marker = b"DATA\n"
    cut = raw.find(marker)
    if cut < 0 or not raw.startswith(CHECKPOINT_MAGIC.encode("ascii")):
        raise ValueError("not a checkpoint file")
    header = raw[:cut].decode("ascii").splitlines()[1:]
    fields = dict(line.split("=", 1) for line in header)
    if fields.pop("phase_convention", PHASE_CONVENTION) != PHASE_CONVENTION:
        raise ValueError("unsupported phase convention")
    count = int(fields.pop("param_count"))
    config = ModelConfig(**{k: int(v) for k, v in fields.items()})
    flat = np.frombuffer(raw[cut + len(marker) :], dtype="<f8").astype(np.float64)
    if flat.size != count:
        raise ValueError("parameter count mismatch")
    layout, total = _layout(config)
    if total != count:
        raise ValueError("layout size mismatch")
    return NqsParameters(flat, layout), config
