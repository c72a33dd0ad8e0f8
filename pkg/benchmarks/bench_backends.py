"""Timing comparison between the compiled tableau kernels and the numpy
fallback, exercised through the public stabilizer/shadow API.

Run without arguments to benchmark both backends and print a speedup
table; the script re-executes itself in a subprocess per backend because
the backend is fixed at import time.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np


def _bench(label, fn, repeats):
    best = min(_timed(fn) for _ in range(repeats))
    print(f"{label},{best:.6f}", flush=True)


def _timed(fn):
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def run_worker(args):
    from nqst import stabilizer as sb
    from nqst import shadows as sh
    from nqst.backend import BACKEND

    print(f"backend,{BACKEND}", flush=True)
    n = args.qubits
    rng = np.random.default_rng(11)

    circuits = [sb.random_clifford(n, rng) for _ in range(args.circuits)]

    def apply_circuits():
        for circ in circuits:
            sb.StabilizerState.zero(n).apply(circ)

    _bench("apply_random_clifford", apply_circuits, args.repeats)

    ghz = sb.StabilizerState.zero(n).apply(sb.ghz_circuit(n))

    def measure():
        mrng = np.random.default_rng(5)
        for _ in range(args.measurements):
            ghz.copy().sample_basis(mrng)

    _bench("sample_basis", measure, args.repeats)

    states = [sb.StabilizerState.zero(n).apply(c) for c in circuits]

    def canonical():
        for s in states:
            s.copy().canonical()

    _bench("canonical_form", canonical, args.repeats)

    half = states[: args.pairs], states[: args.pairs]

    def overlaps():
        sb.abs2_matrix_states(*half)

    _bench("overlap_matrix", overlaps, args.repeats)

    data_rng = np.random.default_rng(3)
    prep = sh.GhzPreparation(6, 0.0)
    dataset = sh.acquire_shadows(prep, "clifford", args.shadows, data_rng)

    def weights():
        sh.normalized_shadow_weights(dataset)

    _bench("shadow_weights", weights, args.repeats)


def run_compare(args):
    rows = {}
    for backend in ("py", "c"):
        env = dict(os.environ, NQST_BACKEND=backend)
        proc = subprocess.run(
            [sys.executable, os.path.abspath(__file__), "--worker"]
            + _forwarded(args),
            env=env,
            capture_output=True,
            text=True,
        )
        if proc.returncode != 0:
            sys.stderr.write(proc.stderr)
            print(f"backend {backend}: failed (is the extension built?)")
            continue
        for line in proc.stdout.splitlines():
            label, value = line.split(",")
            if label != "backend":
                rows.setdefault(label, {})[backend] = float(value)

    width = max(len(k) for k in rows)
    print(f"{'workload'.ljust(width)}  {'numpy':>10}  {'compiled':>10}  {'speedup':>8}")
    for label, times in rows.items():
        py, c = times.get("py"), times.get("c")
        if py is None or c is None:
            print(f"{label.ljust(width)}  {'-':>10}  {'-':>10}  {'-':>8}")
            continue
        print(
            f"{label.ljust(width)}  {py:>9.4f}s  {c:>9.4f}s  {py / c:>7.1f}x"
        )


def _forwarded(args):
    return [
        "--qubits", str(args.qubits),
        "--circuits", str(args.circuits),
        "--measurements", str(args.measurements),
        "--pairs", str(args.pairs),
        "--shadows", str(args.shadows),
        "--repeats", str(args.repeats),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    parser.add_argument("--qubits", type=int, default=10)
    parser.add_argument("--circuits", type=int, default=200)
    parser.add_argument("--measurements", type=int, default=1000)
    parser.add_argument("--pairs", type=int, default=150)
    parser.add_argument("--shadows", type=int, default=300)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()
    if args.worker:
        run_worker(args)
    else:
        run_compare(args)


if __name__ == "__main__":
    main()
