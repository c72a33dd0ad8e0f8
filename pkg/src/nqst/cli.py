"""Subcommand front end: generate | train | evaluate | study.

Every run resolves a flat key=value config (defaults, then --preset,
then --config file, then explicit flags), writes its artifacts into
--out, and finishes with a manifest listing a sha256 digest for every
file in that directory. Seeds for trials and study instances derive as
seed + stable-hash(role, index), so a worker pool may execute them in
any order without changing a single byte of output. Epoch timings stay
out of the emitted CSVs for the same reason.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import evaluation as ev
from . import model as md
from . import shadows as sh
from . import stabilizer as sb
from . import training as tr

MANIFEST_NAME = "manifest.json"
CONFIG_ECHO_NAME = "run.cfg"
WORKERS_ENV = "NQST_WORKERS"


class UsageError(ValueError):
    """Bad flags or config; exits with code 2 instead of a traceback."""


def derive_seed(seed, role, index):
    """seed + stable 63-bit hash of (role, index); process independent."""
    tag = f"{role}:{index}".encode("ascii")
    h = int.from_bytes(hashlib.sha256(tag).digest()[:8], "big")
    return (int(seed) + h) % (1 << 63)


def worker_count():
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        w = int(raw)
    except ValueError:
        raise UsageError(f"{WORKERS_ENV} must be an integer, got {raw!r}")
    if w < 1:
        raise UsageError(f"{WORKERS_ENV} must be >= 1")
    return w


def _map_indexed(fn, count):
    # results keyed by index, so pool scheduling cannot reorder them
    if worker_count() == 1 or count <= 1:
        return [fn(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=worker_count()) as pool:
        return list(pool.map(fn, range(count)))


# -- config resolution --------------------------------------------------

def _csv_ints(text):
    return tuple(int(x) for x in str(text).split(","))


def _csv_strs(text):
    return tuple(x.strip() for x in str(text).split(","))


REQUIRED = object()

# key -> (parser, default); REQUIRED means the resolved config must have it
_KEYS = {
    "generate": {
        "state": (str, REQUIRED),
        "ensemble": (str, REQUIRED),
        "n": (int, REQUIRED),
        "seed": (int, REQUIRED),
        "out": (str, REQUIRED),
    },
    "train": {
        "dataset": (str, REQUIRED),
        "seed": (int, REQUIRED),
        "out": (str, REQUIRED),
        "trials": (int, 1),
        "epochs": (int, 50),
        "lr": (float, 0.01),
        "minibatch": (int, 100),
        "mc": (int, 500),
        "val-fraction": (float, 0.0),
        "patience": (int, 10),
        "loss": (str, "sce"),
        "sampler": (str, "ss"),
        "truth": (str, None),
        "ancillas": (int, 0),
        "layers": (int, 2),
        "embed-dim": (int, 8),
        "heads": (int, 4),
        "ff-dim": (int, 32),
    },
    "evaluate": {
        "checkpoint": (str, REQUIRED),
        "truth": (str, REQUIRED),
        "seed": (int, REQUIRED),
        "out": (str, REQUIRED),
        "dataset": (str, None),
    },
    "study": {
        "study": (str, REQUIRED),
        "seed": (int, REQUIRED),
        "out": (str, REQUIRED),
        "qubits": (_csv_ints, (2, 3)),
        "shadows": (_csv_ints, (250, 1000, 4000)),
        "ensembles": (_csv_strs, ("pauli", "clifford")),
        "instances": (int, 32),
        "dataset": (str, None),
        "checkpoint": (str, None),
        "truth": (str, None),
        "strings": (int, 5000),
        "alphabet": (str, "IXYZ"),
        "mc": (int, 500),
        "epochs": (int, 25),
        "minibatch": (int, 100),
        "loss": (str, "sce"),
        "ancillas": (int, 0),
        "layers": (int, 2),
        "embed-dim": (int, 8),
        "heads": (int, 4),
        "ff-dim": (int, 32),
    },
}

# the two benchmark recipes; values land on top of subcommand defaults
PRESETS = {
    "table1-pure": {
        "ensemble": "clifford",
        "n": 1000,
        "trials": 5,
        "epochs": 50,
        "lr": 0.01,
        "minibatch": 100,
        "mc": 500,
        "val-fraction": 0.0,
        "loss": "sce",
        "sampler": "ss",
    },
    "table1-mixed": {
        "ensemble": "pauli",
        "n": 5000,
        "trials": 5,
        "epochs": 100,
        "lr": 0.01,
        "minibatch": 20,
        "mc": 500,
        "val-fraction": 0.25,
        "loss": "sce",
        "sampler": "ss",
        "ancillas": 6,
    },
}


def _parse_config_file(path, keys, subcommand):
    pairs = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}")
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key == "subcommand":
            # echoed run.cfg files carry their subcommand; accept a match
            if value.strip() != subcommand:
                raise UsageError(
                    f"{path}:{lineno}: config is for {value.strip()!r}, "
                    f"not {subcommand!r}"
                )
            continue
        if key not in keys:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        parse = keys[key][0]
        try:
            pairs[key] = parse(value.strip())
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value for {key!r}: {value.strip()!r}")
    return pairs


def _resolve_config(subcommand, args):
    keys = _KEYS[subcommand]
    cfg = {k: dflt for k, (_, dflt) in keys.items() if dflt is not REQUIRED}
    preset = getattr(args, "preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise UsageError(f"unknown preset {preset!r}")
        cfg.update({k: v for k, v in PRESETS[preset].items() if k in keys})
    if getattr(args, "config", None) is not None:
        cfg.update(_parse_config_file(args.config, keys, subcommand))
    for key in keys:
        flag_value = getattr(args, key.replace("-", "_"), None)
        if flag_value is not None:
            cfg[key] = flag_value
    missing = [k for k, (_, dflt) in keys.items() if dflt is REQUIRED and k not in cfg]
    if missing:
        raise UsageError(f"missing required keys: {', '.join(sorted(missing))}")
    return cfg


def _echo_config(outdir, subcommand, cfg):
    lines = [f"subcommand={subcommand}"]
    for key in sorted(cfg):
        value = cfg[key]
        if value is None:
            continue
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key}={value}")
    (outdir / CONFIG_ECHO_NAME).write_text("\n".join(lines) + "\n")


# -- manifest -----------------------------------------------------------

def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(outdir, subcommand, cfg, started, t0):
    artifacts = {}
    for path in sorted(outdir.rglob("*")):
        if path.is_file() and path.name != MANIFEST_NAME:
            artifacts[str(path.relative_to(outdir))] = _sha256(path)
    payload = {
        "subcommand": subcommand,
        "config": {
            k: (",".join(str(x) for x in v) if isinstance(v, tuple) else v)
            for k, v in cfg.items()
            if v is not None
        },
        "version": __version__,
        "started": started,
        "seconds": round(time.perf_counter() - t0, 3),
        "artifacts": artifacts,
    }
    with open(outdir / MANIFEST_NAME, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _open_outdir(cfg):
    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


# -- state and truth specs ----------------------------------------------

def parse_state_spec(spec):
    """ghz:<n>, noisy-ghz:<n>:<p>, or random-clifford:<n>."""
    parts = str(spec).split(":")
    try:
        if parts[0] == "ghz" and len(parts) == 2:
            return "ghz", int(parts[1]), 0.0
        if parts[0] == "noisy-ghz" and len(parts) == 3:
            n, p = int(parts[1]), float(parts[2])
            if not 0.0 <= p <= 1.0:
                raise UsageError(f"noise probability {p} outside [0, 1]")
            return "ghz", n, p
        if parts[0] == "random-clifford" and len(parts) == 2:
            return "random-clifford", int(parts[1]), 0.0
    except ValueError:
        pass
    raise UsageError(
        f"bad state spec {spec!r}; expected ghz:<n>, noisy-ghz:<n>:<p>, "
        "or random-clifford:<n>"
    )


def _preparation(kind, n, p, seed):
    if kind == "ghz":
        return sh.GhzPreparation(n, p)
    rng = np.random.default_rng(derive_seed(seed, "state", 0))
    circuit = sb.random_clifford(n, rng)
    return sh.FixedPreparation(sb.StabilizerState.zero(n).apply(circuit))


def _pure_truth_vector(spec, seed):
    """Dense vector for a pure state spec; random-clifford rebuilds from seed."""
    kind, n, p = parse_state_spec(spec)
    if p > 0.0:
        raise UsageError(f"{spec!r} is mixed; a pure reference state is required here")
    if kind == "ghz":
        vec = np.zeros(1 << n, dtype=complex)
        vec[0] = vec[-1] = 1.0 / np.sqrt(2.0)
        return vec
    rng = np.random.default_rng(derive_seed(seed, "state", 0))
    circuit = sb.random_clifford(n, rng)
    return sb.StabilizerState.zero(n).apply(circuit).to_dense()


def _truth_operator(spec, seed):
    """(DenseOperator, pure vector or None) for an evaluate truth spec."""
    if str(spec).startswith("checkpoint:"):
        params, config = md.load_checkpoint(str(spec).split(":", 1)[1])
        return md.density_matrix(params, config), None
    kind, n, p = parse_state_spec(spec)
    if kind == "ghz":
        truth = ev.exact_noisy_ghz(n, p)
        vec = _pure_truth_vector(spec, seed) if p == 0.0 else None
        return truth.rho, vec
    vec = _pure_truth_vector(spec, seed)
    return sh.DenseOperator(n, np.outer(vec, vec.conj())), vec


# -- subcommands ---------------------------------------------------------

def cmd_generate(cfg):
    kind, n_qubits, noise = parse_state_spec(cfg["state"])
    if cfg["ensemble"] not in ("pauli", "clifford"):
        raise UsageError(f"unknown ensemble {cfg['ensemble']!r}")
    if cfg["n"] < 1:
        raise UsageError("need at least one snapshot")
    outdir = _open_outdir(cfg)
    prep = _preparation(kind, n_qubits, noise, cfg["seed"])
    rng = np.random.default_rng(derive_seed(cfg["seed"], "acquire", 0))
    dataset = sh.acquire_shadows(prep, cfg["ensemble"], cfg["n"], rng, seed=cfg["seed"])
    dataset.save(outdir / "shadows.txt")
    return outdir


def _curve_csv(path, records):
    # wall-clock column deliberately omitted: artifacts must be seed-reproducible
    lines = ["epoch,lr,loss,infidelity"]
    for r in records:
        lines.append(f"{r.epoch},{r.lr:.10g},{r.loss:.10g},{r.infidelity:.10g}")
    Path(path).write_text("\n".join(lines) + "\n")


def _mean_curve_csv(path, runs):
    longest = max(len(run.records) for run in runs)
    lines = ["epoch,loss_mean,infidelity_mean"]
    if longest == 0:
        Path(path).write_text(lines[0] + "\n")
        return
    for epoch in range(longest):
        losses, infids = [], []
        for run in runs:
            # early-stopped trials hold their final value, matching the
            # restored-best-parameters semantics of the training loop
            rec = run.records[min(epoch, len(run.records) - 1)]
            losses.append(rec.loss)
            infids.append(rec.infidelity)
        lines.append(
            f"{epoch},{np.mean(losses):.10g},{np.mean(infids):.10g}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def _trial_score(run):
    if run.val_losses:
        return min(run.val_losses)
    if not run.records:
        return 0.0
    return run.records[-1].loss


def cmd_train(cfg):
    dataset = sh.ShadowDataset.load(cfg["dataset"])
    try:
        loss = tr.LossKind(cfg["loss"])
        sampler = tr.SamplerKind(cfg["sampler"])
    except ValueError:
        raise UsageError(
            f"unknown loss or sampler: {cfg['loss']!r} / {cfg['sampler']!r}"
        )
    truth = None
    if cfg["truth"] is not None:
        truth = _pure_truth_vector(cfg["truth"], cfg["seed"])
        if truth.size != 1 << dataset.n:
            raise UsageError("truth state and dataset qubit counts differ")
    if cfg["trials"] < 1:
        raise UsageError("trials must be >= 1")
    outdir = _open_outdir(cfg)

    def one_trial(t):
        model_config = md.ModelConfig(
            n_phys=dataset.n,
            n_anc=cfg["ancillas"],
            layers=cfg["layers"],
            embed_dim=cfg["embed-dim"],
            heads=cfg["heads"],
            ff_dim=cfg["ff-dim"],
            seed=derive_seed(cfg["seed"], "model", t),
        )
        train_config = tr.TrainConfig(
            epochs=cfg["epochs"],
            initial_lr=cfg["lr"],
            minibatch_size=cfg["minibatch"],
            mc_samples=cfg["mc"],
            early_stop_patience=cfg["patience"],
            seed=derive_seed(cfg["seed"], "trial", t),
            loss=loss,
            sampler=sampler,
            val_fraction=cfg["val-fraction"],
        )
        return tr.train(dataset, model_config, train_config, truth=truth), model_config

    results = _map_indexed(one_trial, cfg["trials"])
    summary = ["trial,final_loss,final_infidelity,best_epoch,stop_reason"]
    for t, (run, _) in enumerate(results):
        _curve_csv(outdir / f"trial_{t}.csv", run.records)
        if run.records:
            last = run.records[-1]
            final = f"{last.loss:.10g},{last.infidelity:.10g}"
        else:
            final = ","
        summary.append(f"{t},{final},{run.best_epoch},{run.stop_reason}")
    (outdir / "summary.csv").write_text("\n".join(summary) + "\n")
    _mean_curve_csv(outdir / "mean.csv", [run for run, _ in results])
    best_run, best_config = min(results, key=lambda pair: _trial_score(pair[0]))
    md.save_checkpoint(outdir / "best.ckpt", best_run.params, best_config)
    return outdir


def cmd_evaluate(cfg):
    params, model_config = md.load_checkpoint(cfg["checkpoint"])
    truth_rho, truth_vec = _truth_operator(cfg["truth"], cfg["seed"])
    if truth_rho.n != model_config.n_phys:
        raise UsageError(
            f"checkpoint has {model_config.n_phys} physical qubits, "
            f"truth has {truth_rho.n}"
        )
    outdir = _open_outdir(cfg)
    model_rho = md.density_matrix(params, model_config)

    rows = [("nqs", model_rho)]
    pair_purity = None
    if cfg["dataset"] is not None:
        dataset = sh.ShadowDataset.load(cfg["dataset"])
        if dataset.n != truth_rho.n:
            raise UsageError("dataset qubit count does not match the truth state")
        raw = sh.shadow_state(dataset)
        rows.append(("shadow", raw))
        rows.append(("projected", sh.simplex_project(raw)))
        pair_purity = ev.shadow_purity(dataset)

    lines = ["source,infidelity,trace_distance,purity"]
    for name, op in rows:
        infid = ""
        if truth_vec is not None:
            if name == "shadow":
                # the unprojected estimator may overlap outside [0, 1]
                f = float(np.real(np.vdot(truth_vec, op.mat @ truth_vec)))
            else:
                f = ev.fidelity_pure(truth_vec, op)
            infid = f"{1.0 - f:.10g}"
        lines.append(
            f"{name},{infid},{ev.trace_distance(truth_rho, op):.10g},"
            f"{ev.purity(op):.10g}"
        )
    if pair_purity is not None:
        # unbiased pair estimate; unclamped, so it may sit outside [0, 1]
        lines.append(f"shadow_pairs,,,{pair_purity:.10g}")
    (outdir / "metrics.csv").write_text("\n".join(lines) + "\n")
    ev.density_to_csv(outdir / "density.csv", model_rho)
    return outdir


def cmd_study(cfg):
    study = cfg["study"]
    outdir = _open_outdir(cfg)
    rng = np.random.default_rng(derive_seed(cfg["seed"], "study", 0))
    if study == "kl":
        report = ev.study_kl(
            cfg["qubits"], cfg["shadows"], cfg["ensembles"], rng,
            instances=cfg["instances"],
        )
    elif study == "gradient-angle":
        if cfg["dataset"] is None:
            raise UsageError("gradient-angle needs --dataset")
        dataset = sh.ShadowDataset.load(cfg["dataset"])
        model_config = md.ModelConfig(
            n_phys=dataset.n,
            n_anc=cfg["ancillas"],
            layers=cfg["layers"],
            embed_dim=cfg["embed-dim"],
            heads=cfg["heads"],
            ff_dim=cfg["ff-dim"],
            seed=derive_seed(cfg["seed"], "model", 0),
        )
        train_config = tr.TrainConfig(
            epochs=cfg["epochs"],
            minibatch_size=cfg["minibatch"],
            mc_samples=cfg["mc"],
            seed=derive_seed(cfg["seed"], "trial", 0),
            loss=tr.LossKind(cfg["loss"]),
        )
        report = ev.study_gradient_angle(dataset, model_config, rng, train_config)
    elif study == "pauli-prediction":
        for key in ("dataset", "checkpoint", "truth"):
            if cfg[key] is None:
                raise UsageError(f"pauli-prediction needs --{key}")
        dataset = sh.ShadowDataset.load(cfg["dataset"])
        params, model_config = md.load_checkpoint(cfg["checkpoint"])
        kind, n, p = parse_state_spec(cfg["truth"])
        if kind != "ghz":
            raise UsageError("pauli-prediction truth must be ghz:<n> or noisy-ghz:<n>:<p>")
        truth = ev.exact_noisy_ghz(n, p)
        report = ev.study_pauli_prediction(
            truth, dataset, params, model_config, cfg["strings"], rng,
            alphabet=cfg["alphabet"],
        )
    else:
        raise UsageError(f"unknown study {study!r}")
    report.to_csv(outdir / "report.csv")
    return outdir


# -- argument parsing ----------------------------------------------------

def _add_keys(parser, subcommand, skip=()):
    for key, (parse, _) in _KEYS[subcommand].items():
        if key not in skip:
            parser.add_argument(f"--{key}", type=parse, default=None)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nqst",
        description="shadow-trained neural quantum state toolkit",
    )
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="subcommand", required=True)

    p_gen = subs.add_parser("generate", help="sample a shadow dataset file")
    _add_keys(p_gen, "generate")
    p_gen.add_argument("--preset", choices=sorted(PRESETS))
    p_gen.add_argument("--config")

    p_train = subs.add_parser("train", help="run training trials on a dataset")
    _add_keys(p_train, "train")
    p_train.add_argument("--preset", choices=sorted(PRESETS))
    p_train.add_argument("--config")

    p_eval = subs.add_parser("evaluate", help="metrics for a trained checkpoint")
    _add_keys(p_eval, "evaluate")
    p_eval.add_argument("--config")

    p_study = subs.add_parser("study", help="kl | gradient-angle | pauli-prediction")
    p_study.add_argument("study", choices=("kl", "gradient-angle", "pauli-prediction"))
    _add_keys(p_study, "study", skip=("study",))
    p_study.add_argument("--config")

    return parser


_DISPATCH = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "study": cmd_study,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    subcommand = args.subcommand
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    try:
        cfg = _resolve_config(subcommand, args)
        outdir = _DISPATCH[subcommand](cfg)
        _echo_config(outdir, subcommand, cfg)
        _write_manifest(outdir, subcommand, cfg, started, t0)
    except (UsageError, tr.ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary: report, exit 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(outdir / MANIFEST_NAME)
    return 0


if __name__ == "__main__":
    sys.exit(main())
