"""Compare the compiled and pure-numpy kernel backends.

The backend is fixed at import time by ACTSCHED_BACKEND, so each side runs in
its own subprocess and reports timings as JSON lines; the parent merges them
into one table. Matrix products go through BLAS either way, so the gap shown
here is the elementwise gate/optimizer work, plus one full training step for
an end-to-end number.

    python3 benchmarks/bench_kernels.py            # both backends
    python3 benchmarks/bench_kernels.py --quick    # smaller shapes, fewer reps
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import subprocess
import sys
import time


def _time_ms(fn, repeat: int) -> float:
    fn()  # warmup; first numba call compiles
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(times)


def run_worker(args) -> None:
    import numpy as np

    from actsched.nn import backend

    rng = np.random.default_rng(0)
    B, S = (256, 128) if args.quick else (1024, 256)
    repeat = 20 if args.quick else 50
    report = []

    gates = rng.standard_normal((B, 4 * S)).astype(np.float32)
    c_prev = rng.standard_normal((B, S)).astype(np.float32)
    report.append(("lstm_gates_forward", _time_ms(
        lambda: backend.lstm_gates_forward(gates, c_prev), repeat)))

    h, c, i, f, g, o, tc = backend.lstm_gates_forward(gates, c_prev)
    dh = rng.standard_normal((B, S)).astype(np.float32)
    dc = rng.standard_normal((B, S)).astype(np.float32)
    report.append(("lstm_gates_backward", _time_ms(
        lambda: backend.lstm_gates_backward(dh, dc, i, f, g, o, c_prev, tc), repeat)))

    n = 200_000 if args.quick else 2_000_000
    param = rng.standard_normal(n).astype(np.float32)
    grad = rng.standard_normal(n).astype(np.float32)
    m = np.zeros(n, dtype=np.float32)
    v = np.zeros(n, dtype=np.float32)
    step = [0]

    def adam():
        step[0] += 1
        backend.adam_update(param, grad, m, v, step[0], 1e-3, 0.9, 0.999, 1e-8)

    report.append(("adam_update", _time_ms(adam, repeat)))

    report.append(("train_step", _bench_train_step(args.quick)))

    for name, ms in report:
        print(json.dumps({"backend": backend.BACKEND, "name": name, "ms": ms}))


def _bench_train_step(quick: bool) -> float:
    import numpy as np

    from actsched import synthpop
    from actsched.data import build_dataset, label_weights, batch_normalized
    from actsched.models import assemble, default_config
    from actsched.nn import autodiff as ad
    from actsched.nn.optim import Adam
    from actsched.vocab import ActivityVocab

    spec = synthpop.default_spec(seed=0)
    n = 256 if quick else 1024
    pop = synthpop.generate_population(spec, n)
    vocab = ActivityVocab(tuple(sorted(set(spec.durations) | {"home"})))
    dataset, _ = build_dataset([s for s, _ in pop], {s.pid: lab for s, lab in pop},
                               vocab, spec.schema())
    cfg = default_config("ActVAE", depth=2, hidden=64 if quick else 128,
                         label_hidden=16, latent=4)
    model = assemble("ActVAE", cfg, dataset.vocab, dataset.schema, seed=0)
    opt = Adam(model.store, lr=1e-3)
    weights = batch_normalized(label_weights(dataset))
    rng = np.random.default_rng(0)

    def step():
        model.store.zero_grads()
        with ad.record() as tape:
            loss, _ = model.loss_batch(dataset.acts, dataset.durs, dataset.labels,
                                       weights, rng, training=True)
            tape.backward(loss)
        opt.step()

    return _time_ms(step, 5 if quick else 10)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--quick", action="store_true", help="smaller shapes, fewer reps")
    parser.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    parser.add_argument("--backends", default="numpy,numba",
                        help="comma-separated backends to compare")
    args = parser.parse_args()

    if args.worker:
        run_worker(args)
        return 0

    rows: dict[str, dict[str, float]] = {}
    backends = [b.strip() for b in args.backends.split(",") if b.strip()]
    for backend in backends:
        env = dict(os.environ, ACTSCHED_BACKEND=backend)
        cmd = [sys.executable, os.path.abspath(__file__), "--worker"]
        if args.quick:
            cmd.append("--quick")
        proc = subprocess.run(cmd, capture_output=True, text=True, env=env)
        if proc.returncode != 0:
            print(f"{backend}: worker failed\n{proc.stderr}", file=sys.stderr)
            continue
        for line in proc.stdout.splitlines():
            rec = json.loads(line)
            rows.setdefault(rec["name"], {})[rec["backend"]] = rec["ms"]

    names = sorted({b for per in rows.values() for b in per})
    header = ["kernel"] + [f"{b} ms" for b in names]
    if len(names) == 2:
        header.append(f"{names[0]}/{names[1]}")
    print("  ".join(f"{h:>20}" for h in header))
    for name, per in rows.items():
        cells = [f"{name:>20}"] + [f"{per.get(b, float('nan')):20.3f}" for b in names]
        if len(names) == 2 and per.get(names[1]):
            cells.append(f"{per.get(names[0], float('nan')) / per[names[1]]:20.2f}")
        print("  ".join(cells))
    return 0


if __name__ == "__main__":
    sys.exit(main())
