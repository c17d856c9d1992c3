"""Batch command surface: synth, train, generate, evaluate, mi, report.

Each command is an independent process run; all randomness is governed by the
seed in the config file or the --seed flag, and rerunning a command with the
same inputs produces byte-identical output files. Errors exit non-zero with a
single `error: <code>: <detail>` line on stderr.

Only the standard library is imported at module scope: the thread cap from
ACTSCHED_THREADS must land in the environment before numpy loads.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import os
import sys
from pathlib import Path


class CliError(Exception):
    def __init__(self, code: str, detail: str):
        self.code = code
        super().__init__(detail)


_THREAD_VARS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "NUMBA_NUM_THREADS",
)


def _cap_threads() -> None:
    cap = os.environ.get("ACTSCHED_THREADS")
    if cap is None or cap == "":
        return
    try:
        value = int(cap)
    except ValueError:
        value = 0
    if value < 1:
        raise CliError("bad-config", f"ACTSCHED_THREADS must be a positive integer, got {cap!r}")
    for var in _THREAD_VARS:
        os.environ[var] = str(value)


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError("missing-file", f"{what} not found: {p}")
    return p


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:12]


def _read_rows(path):
    """CSV rows with comment lines stripped."""
    with open(path, newline="") as fh:
        return [row for row in csv.reader(line for line in fh if not line.startswith("#")) if row]


# ---------------------------------------------------------------------------
# population directories
#
# synth and generate both emit a directory holding schedules.csv, labels.csv,
# vocab.txt, and schema.tsv so that evaluate composes over either.


def _write_population(outdir, schedules, pids, vectors, vocab, schema, run_hash):
    from .data import write_labels_csv, write_schedules_csv

    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_schedules_csv(outdir / "schedules.csv", schedules, config_hash=run_hash)
    write_labels_csv(outdir / "labels.csv", pids, vectors, schema, config_hash=run_hash)
    vocab.save(outdir / "vocab.txt")
    schema.save(outdir / "schema.tsv")
    return outdir


def _load_population(popdir, what, vocab=None, schema=None, run_preprocess=True, L=None):
    from .data import build_dataset, read_labels_csv, read_schedules_csv
    from .schedules import DEFAULT_L
    from .vocab import ActivityVocab, LabelSchema

    popdir = _require(popdir, f"{what} population directory")
    if not popdir.is_dir():
        raise CliError("bad-args", f"{what} population must be a directory: {popdir}")
    sched_path = _require(popdir / "schedules.csv", f"{what} schedules")
    label_path = _require(popdir / "labels.csv", f"{what} labels")

    own_vocab = ActivityVocab.load(popdir / "vocab.txt") if (popdir / "vocab.txt").exists() else None
    own_schema = LabelSchema.load(popdir / "schema.tsv") if (popdir / "schema.tsv").exists() else None
    if vocab is None:
        vocab = own_vocab or ActivityVocab()
    elif own_vocab is not None and own_vocab != vocab:
        raise CliError("schema-mismatch", f"{what} vocabulary differs from the real side")
    if schema is None:
        schema = own_schema or _default_schema()
    elif own_schema is not None and own_schema != schema:
        raise CliError("schema-mismatch", f"{what} label schema differs from the real side")

    schedules = read_schedules_csv(sched_path)
    labels = read_labels_csv(label_path, schema)
    dataset, dropped = build_dataset(
        schedules, labels, vocab, schema, L=L or DEFAULT_L, run_preprocess=run_preprocess
    )
    return dataset, vocab, schema, dropped


def _default_schema():
    from .vocab import DEFAULT_LABEL_SCHEMA

    return DEFAULT_LABEL_SCHEMA


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    from . import synthpop
    from .config import config_hash
    from .vocab import ActivityVocab

    import numpy as np

    if args.spec:
        spec = synthpop.GeneratorSpec.from_yaml(_require(args.spec, "generator spec"))
    else:
        spec = synthpop.default_spec()
    if args.seed is not None:
        payload = spec.to_dict()
        payload["seed"] = args.seed
        spec = synthpop.GeneratorSpec.from_dict(payload)

    pop = synthpop.generate_population(spec, args.n)
    run_hash = config_hash({"command": "synth", "spec": spec.to_dict(), "n": args.n})
    schema = spec.schema()
    vocab = ActivityVocab(tuple(sorted(set(spec.durations) | {"home"})))
    schedules = [s for s, _ in pop]
    vectors = np.array([vec for _, vec in pop], dtype=np.int64)
    outdir = _write_population(args.out, schedules, [s.pid for s in schedules],
                               vectors, vocab, schema, run_hash)
    print(f"synth: n={args.n} seed={spec.seed} hash={run_hash} out={outdir}")
    return 0


def _apply_overrides(rc, args) -> None:
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
        rc.train.seed = args.seed
    if getattr(args, "sample_frac", None) is not None:
        rc.scenario.sample_frac = args.sample_frac
    if getattr(args, "labels", None):
        rc.scenario.labels = [s.strip() for s in args.labels.split(",") if s.strip()]
    rc.validate()


def _prepare_dataset(rc):
    """Read, encode, subsample, restrict, and split per the config.

    The result is a pure function of the config, so a later command (mi) can
    rebuild exactly the split the training run used.
    """
    from .data import split_dataset
    from .vocab import ActivityVocab, LabelSchema

    import numpy as np

    if not rc.paths.schedules or not rc.paths.labels:
        raise CliError("bad-config", "config must set paths.schedules and paths.labels")
    vocab = ActivityVocab.load(_require(rc.paths.vocab, "vocab manifest")) \
        if rc.paths.vocab else ActivityVocab()
    schema = LabelSchema.load(_require(rc.paths.schema, "schema manifest")) \
        if rc.paths.schema else _default_schema()

    popdir = Path(rc.paths.schedules).parent
    dataset, vocab, schema, dropped = _load_population(
        popdir, "input", vocab=None, schema=None, run_preprocess=True, L=rc.model.L
    ) if _population_layout(rc) else _read_pair(rc, vocab, schema)

    if rc.scenario.labels:
        keep = rc.scenario.labels
        sub = dataset.schema.subset(keep)
        cols = [dataset.schema.names.index(n) for n in sub.names]
        dataset.labels = dataset.labels[:, cols]
        dataset.schema = sub
    if rc.scenario.sample_frac < 1.0:
        n_keep = max(10, int(round(rc.scenario.sample_frac * len(dataset))))
        rng = np.random.default_rng(rc.seed)
        keep_idx = np.sort(rng.choice(len(dataset), size=min(n_keep, len(dataset)), replace=False))
        dataset = dataset.subset(keep_idx)
    return split_dataset(dataset, seed=rc.seed), dropped


def _population_layout(rc) -> bool:
    # schedules + labels live beside vocab/schema manifests in one directory
    sched = Path(rc.paths.schedules)
    return (
        sched.name == "schedules.csv"
        and Path(rc.paths.labels).parent == sched.parent
        and not rc.paths.vocab
        and not rc.paths.schema
    )


def _read_pair(rc, vocab, schema):
    from .data import build_dataset, read_labels_csv, read_schedules_csv

    schedules = read_schedules_csv(_require(rc.paths.schedules, "schedules file"))
    labels = read_labels_csv(_require(rc.paths.labels, "labels file"), schema)
    dataset, dropped = build_dataset(schedules, labels, vocab, schema, L=rc.model.L)
    return dataset, vocab, schema, dropped


def cmd_train(args) -> int:
    from . import trainer
    from .config import RunConfig
    from .models import assemble

    rc = RunConfig.from_yaml(_require(args.config, "run config"))
    _apply_overrides(rc, args)

    outdir = Path(args.out) if args.out else None
    ckpt = outdir / "model.ckpt" if outdir else rc.paths.checkpoint
    if not ckpt:
        raise CliError("bad-config", "set paths.checkpoint in the config or pass --out")
    hist = outdir / "history.csv" if outdir \
        else rc.paths.history or Path(ckpt).parent / "history.csv"
    Path(ckpt).parent.mkdir(parents=True, exist_ok=True)
    Path(hist).parent.mkdir(parents=True, exist_ok=True)

    dataset, dropped = _prepare_dataset(rc)
    model = assemble(rc.kind, rc.model, dataset.vocab, dataset.schema, seed=rc.seed)
    try:
        result = trainer.train(model, dataset, rc.train)
    except trainer.TrainDivergedError as e:
        raise CliError("train-diverged", str(e)) from None

    run_hash = rc.hash()
    trainer.save_model(ckpt, model, extra_meta={
        "config_hash": run_hash,
        "source_tag": rc.scenario.source_tag,
        "best_epoch": result.best_epoch,
        "best_val": result.best_val,
        "epochs_run": result.epochs_run,
    })
    trainer.write_history_csv(hist, result.history, config_hash=run_hash)
    print(
        f"train: kind={rc.kind} n={len(dataset)} dropped={dropped} "
        f"epochs={result.epochs_run} best_epoch={result.best_epoch} "
        f"best_val={result.best_val!r} hash={run_hash} checkpoint={ckpt}"
    )
    return 0


def _marginal_column(rng, probs, n):
    import numpy as np

    edges = np.cumsum(probs)
    return np.searchsorted(edges, rng.random(n) * edges[-1], side="right").clip(0, len(probs) - 1)


def _generation_labels(args, model, rng):
    """Label vectors for generation plus a hashable description of the source."""
    from .data import read_labels_csv

    import numpy as np
    import yaml

    schema = model.schema
    if schema is None:
        raise CliError("bad-config", "checkpoint carries no label schema")

    if args.labels_file:
        path = _require(args.labels_file, "target labels file")
        rows = read_labels_csv(path, schema)
        vectors = np.array(list(rows.values()), dtype=np.int64)
        if args.n is not None and args.n != len(vectors):
            raise CliError("bad-args",
                           f"--n {args.n} does not match {len(vectors)} label rows")
        return vectors, {"labels_file": _file_digest(path)}

    if args.n is None:
        raise CliError("bad-args", "--n is required unless --labels-file is given")
    n = args.n

    base = None
    if args.real_labels:
        path = _require(args.real_labels, "real labels file")
        base = np.array(list(read_labels_csv(path, schema).values()), dtype=np.int64)

    if args.label_dist:
        dist_path = _require(args.label_dist, "label distribution override")
        with open(dist_path) as fh:
            dist = yaml.safe_load(fh) or {}
        unknown = sorted(set(dist) - set(schema.names))
        if unknown:
            raise CliError("bad-config", f"label-dist names unknown variables: {unknown}")
        if base is not None:
            vectors = base[rng.integers(0, len(base), size=n)].copy()
        else:
            missing = sorted(set(schema.names) - set(dist))
            if missing:
                raise CliError("bad-config",
                               f"label-dist must cover all variables (missing {missing}) "
                               "when no --real-labels file is given")
            vectors = np.zeros((n, len(schema)), dtype=np.int64)
        for li, name in enumerate(schema.names):
            if name not in dist:
                continue
            cats = schema.categories(name)
            given = dist[name] or {}
            bad = sorted(set(given) - set(cats))
            if bad:
                raise CliError("bad-config", f"label-dist {name}: unknown categories {bad}")
            probs = np.array([float(given.get(c, 0.0)) for c in cats])
            if probs.sum() <= 0 or abs(probs.sum() - 1.0) > 1e-6:
                raise CliError("bad-config", f"label-dist {name}: probabilities must sum to 1")
            vectors[:, li] = _marginal_column(rng, probs, n)
        return vectors, {"label_dist": dist, "base": args.real_labels and _file_digest(args.real_labels)}

    if base is None:
        raise CliError("bad-args",
                       "labels must come from --labels-file, --label-dist, or --real-labels")
    vectors = base[rng.integers(0, len(base), size=n)]
    return vectors, {"resample": _file_digest(args.real_labels)}


def cmd_generate(args) -> int:
    from .config import RunConfig, config_hash
    from .nn.checkpoint import load_checkpoint
    from .schedules import EncodedSchedule, decode_schedule
    from .trainer import load_model

    import numpy as np

    ckpt = _require(args.checkpoint, "checkpoint")
    model = load_model(ckpt)
    _, meta = load_checkpoint(ckpt)

    if args.config:
        rc = RunConfig.from_yaml(_require(args.config, "run config"))
        stored = meta.get("config_hash")
        if stored and stored != rc.hash():
            raise CliError("config-hash-mismatch",
                           f"checkpoint was trained under {stored}, config resolves to {rc.hash()}")
        if not args.real_labels and rc.paths.labels:
            args.real_labels = rc.paths.labels

    rng = np.random.default_rng(args.seed)
    vectors, source = _generation_labels(args, model, rng)
    n = len(vectors)
    acts, durs, flags = model.generate(
        labels=vectors if model.use_labels else None, n=n, rng=rng
    )

    run_hash = config_hash({
        "command": "generate",
        "model": model.config_payload(),
        "n": n,
        "seed": args.seed,
        "source": source,
    })
    pids = [f"g{i:06d}" for i in range(n)]
    schedules = [
        decode_schedule(EncodedSchedule(acts[i], durs[i]), model.vocab, pid=pids[i])
        for i in range(n)
    ]
    outdir = _write_population(args.out, schedules, pids, vectors,
                               model.vocab, model.schema, run_hash)
    print(
        f"generate: kind={model.kind} n={n} degenerate={int(flags.sum())} "
        f"seed={args.seed} hash={run_hash} out={outdir}"
    )
    return 0


def cmd_evaluate(args) -> int:
    from . import evalsuite
    from .config import config_hash

    real_ds, vocab, schema, dropped = _load_population(args.real, "real")
    synth_ds, _, _, _ = _load_population(
        args.synth, "synthetic", vocab=vocab, schema=schema, run_preprocess=False
    )
    if args.train_ref:
        ref_ds, _, _, _ = _load_population(
            args.train_ref, "reference", vocab=vocab, schema=schema
        )
    else:
        ref_ds = real_ds

    real = evalsuite.SampleSet.from_dataset(real_ds, role="real")
    synth = evalsuite.SampleSet.from_dataset(synth_ds, role="synthetic")
    ref = evalsuite.SampleSet.from_dataset(ref_ds, role="real")

    report = evalsuite.joint_density_report(real, synth)
    feas = evalsuite.feasibility_report(synth)
    creat = evalsuite.creativity_report(synth, ref)
    expect = evalsuite.expectation_report(real, synth)

    run_hash = config_hash({
        "command": "evaluate",
        "real": _population_digest(args.real),
        "synth": _population_digest(args.synth),
        "ref": _population_digest(args.train_ref) if args.train_ref else None,
    })
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    evalsuite.write_report_csv(outdir / "report.csv", report, config_hash=run_hash)
    evalsuite.write_summary_csv(outdir / "summary.csv", report, feas, creat,
                                config_hash=run_hash)
    _write_expectations(outdir / "expectations.csv", expect, run_hash)

    parts = " ".join(
        f"{name}={value!r}" for name, value in evalsuite.summary_rows(report, feas, creat)
    )
    print(f"evaluate: {parts} dropped_real={dropped} flags={len(report.flags)} "
          f"hash={run_hash} out={outdir}")
    return 0


def _population_digest(popdir) -> dict:
    popdir = Path(popdir)
    return {
        "schedules": _file_digest(popdir / "schedules.csv"),
        "labels": _file_digest(popdir / "labels.csv"),
    }


def _write_expectations(path, rows, run_hash) -> None:
    cols = ["feature", "label", "category", "real_mean", "synth_mean",
            "n_real", "n_synth", "flag"]
    with open(path, "w", newline="") as fh:
        fh.write(f"# config_hash: {run_hash}\n")
        w = csv.writer(fh)
        w.writerow(cols)
        for r in rows:
            w.writerow([r["feature"], r["label"], r["category"],
                        repr(float(r["real_mean"])), repr(float(r["synth_mean"])),
                        r["n_real"], r["n_synth"], r["flag"]])


def cmd_mi(args) -> int:
    from . import mine
    from .config import RunConfig, config_hash
    from .trainer import load_model

    actvae = load_model(_require(args.actvae, "first checkpoint"))
    genrnn = load_model(_require(args.genrnn, "second checkpoint"))
    if actvae.kind != "ActVAE" or genrnn.kind != "GenerativeRNN":
        raise CliError("bad-args",
                       f"expected an ActVAE and a GenerativeRNN checkpoint, "
                       f"got {actvae.kind} and {genrnn.kind}")

    rc = RunConfig.from_yaml(_require(args.config, "run config"))
    seed = args.seed if args.seed is not None else rc.seed
    dataset, _ = _prepare_dataset(rc)
    for model, name in ((actvae, "first"), (genrnn, "second")):
        if model.vocab != dataset.vocab:
            raise CliError("schema-mismatch", f"{name} checkpoint vocabulary differs from the dataset")
    if actvae.schema != dataset.schema:
        raise CliError("schema-mismatch", "first checkpoint label schema differs from the dataset")

    mcfg = mine.MineConfig(
        max_epochs=rc.evaluate.mine_epochs,
        batch_size=rc.evaluate.mine_batch,
        patience=rc.evaluate.mine_patience,
        lr=rc.evaluate.mine_lr,
        seed=seed,
    )
    rows = mine.entanglement_study(
        actvae, genrnn, dataset, split=rc.evaluate.split, cfg=mcfg, runs=args.runs
    )
    run_hash = config_hash({
        "command": "mi",
        "config": rc.payload(),
        "seed": seed,
        "runs": args.runs,
        "checkpoints": [_file_digest(args.actvae), _file_digest(args.genrnn)],
    })
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    mine.write_mi_csv(args.out, rows, config_hash=run_hash)
    for r in rows:
        print(f"mi: {r['embedding_model']} {r['quantity']} = {r['estimate']!r} "
              f"(raw {r['raw']!r})")
    print(f"mi: hash={run_hash} out={args.out}")
    return 0


def cmd_report(args) -> int:
    from .config import config_hash

    import numpy as np

    if len(args.inputs) < 2:
        raise CliError("bad-args", "need at least two input reports to merge")
    if args.runs is not None and args.runs != len(args.inputs):
        raise CliError("bad-args",
                       f"--runs {args.runs} does not match {len(args.inputs)} inputs")

    tables = []
    for path in args.inputs:
        rows = _read_rows(_require(path, "input report"))
        if not rows:
            raise CliError("bad-args", f"empty report: {path}")
        tables.append((rows[0], rows[1:]))
    header = tables[0][0]
    for path, (hdr, _) in zip(args.inputs, tables):
        if hdr != header:
            raise CliError("schema-mismatch", f"{path} header differs from {args.inputs[0]}")

    def is_numeric(col):
        try:
            for _, body in tables:
                for row in body:
                    float(row[col])
            return True
        except (ValueError, IndexError):
            return False

    numeric = [j for j in range(len(header)) if is_numeric(j)]
    keys = [j for j in range(len(header)) if j not in numeric]

    order = [tuple(row[j] for j in keys) for row in tables[0][1]]
    values: dict[tuple, list[list[float]]] = {k: [] for k in order}
    for path, (_, body) in zip(args.inputs, tables):
        seen = set()
        for row in body:
            key = tuple(row[j] for j in keys)
            if key not in values:
                raise CliError("schema-mismatch", f"{path}: unexpected row {key}")
            seen.add(key)
            values[key].append([float(row[j]) for j in numeric])
        if len(seen) != len(order):
            raise CliError("schema-mismatch", f"{path}: missing rows")

    run_hash = config_hash({
        "command": "report",
        "inputs": [_file_digest(p) for p in args.inputs],
    })
    out_header = [header[j] for j in keys]
    for j in numeric:
        out_header += [f"{header[j]}_mean", f"{header[j]}_var"]
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        fh.write(f"# config_hash: {run_hash}\n")
        w = csv.writer(fh)
        w.writerow(out_header)
        for key in order:
            arr = np.array(values[key], dtype=np.float64)
            out = list(key)
            for c in range(arr.shape[1]):
                out.append(repr(float(arr[:, c].mean())))
                out.append(repr(float(arr[:, c].var(ddof=1))))
            w.writerow(out)
    print(f"report: runs={len(args.inputs)} rows={len(order)} hash={run_hash} out={args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("bad-args", message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="actsched",
                description="Batch workflows for conditional schedule generation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="draw a synthetic population from a generator spec")
    s.add_argument("spec", nargs="?", default=None,
                   help="generator spec YAML; a built-in default is used when omitted")
    s.add_argument("n", type=int, help="population size")
    s.add_argument("--out", required=True, help="population directory to write")
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(run=cmd_synth)

    t = sub.add_parser("train", help="preprocess, encode, split, train, checkpoint")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--sample-frac", type=float, default=None,
                   help="train on a random fraction of the input")
    t.add_argument("--labels", default=None,
                   help="comma-separated label variables to keep")
    t.add_argument("--out", default=None,
                   help="directory for checkpoint and history when paths are not configured")
    t.set_defaults(run=cmd_train)

    g = sub.add_parser("generate", help="sample schedules from a trained checkpoint")
    g.add_argument("checkpoint")
    g.add_argument("--n", type=int, default=None)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="population directory to write")
    g.add_argument("--labels-file", default=None,
                   help="explicit target labels, one row per schedule")
    g.add_argument("--label-dist", default=None,
                   help="YAML marginal override per label variable")
    g.add_argument("--real-labels", default=None,
                   help="label file to resample target labels from")
    g.add_argument("--config", default=None,
                   help="run config for hash checking and default label source")
    g.set_defaults(run=cmd_generate)

    e = sub.add_parser("evaluate", help="score a synthetic population against a real one")
    e.add_argument("real", help="real population directory")
    e.add_argument("synth", help="synthetic population directory")
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--train-ref", default=None,
                   help="population directory for the conservatism reference")
    e.set_defaults(run=cmd_evaluate)

    m = sub.add_parser("mi", help="latent-label mutual information study")
    m.add_argument("actvae", help="conditional VAE checkpoint")
    m.add_argument("genrnn", help="unconditional VAE checkpoint")
    m.add_argument("--config", required=True)
    m.add_argument("--out", required=True)
    m.add_argument("--runs", type=int, default=1)
    m.add_argument("--seed", type=int, default=None)
    m.set_defaults(run=cmd_mi)

    r = sub.add_parser("report", help="merge reports from repeated runs")
    r.add_argument("inputs", nargs="+", help="two or more report CSVs of one shape")
    r.add_argument("--out", required=True)
    r.add_argument("--runs", type=int, default=None,
                   help="expected run count; mismatch is an error")
    r.set_defaults(run=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        _cap_threads()
        args = build_parser().parse_args(argv)
        return args.run(args)
    except CliError as e:
        print(f"error: {e.code}: {e}", file=sys.stderr)
        return 1
    except FileNotFoundError as e:
        print(f"error: missing-file: {e.filename or e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError) as e:
        print(f"error: bad-config: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
