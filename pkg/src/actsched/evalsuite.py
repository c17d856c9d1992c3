"""Distributional comparison of schedule sets.

Three feature domains: participation counts (plus sequence length), ordered
activity 2-grams, and per-occurrence timing (start, duration). Each feature's
real-vs-synthetic gap is an exact one-dimensional earth-mover distance, rolled
up category -> label -> joint. Category rows are weighted by real-side counts;
the domain mean over features is unweighted for counts and 2-grams and
occurrence-weighted for timing. Rows whose synthetic side is empty carry a
flag and drop out of the rollup, with weights renormalized over what remains.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .schedules import MERGEABLE
from .vocab import EOS, SOS, ActivityVocab, LabelSchema

ROLES = ("real", "synthetic")
DOMAINS = ("participations", "transitions", "timing")
DURATION_BIN = 144  # 10-minute bins per fractional day
COMBINED = "(combined)"


@dataclass
class SampleSet:
    acts: np.ndarray
    durs: np.ndarray
    labels: np.ndarray
    vocab: ActivityVocab
    schema: LabelSchema
    role: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}")
        if len(self.acts) == 0:
            raise ValueError("empty sample set")
        if not (len(self.acts) == len(self.durs) == len(self.labels)):
            raise ValueError("misaligned arrays")

    def __len__(self) -> int:
        return int(self.acts.shape[0])

    @classmethod
    def from_dataset(cls, ds, split: str | None = None, role: str = "real"):
        idx = ds.indices(split)
        return cls(ds.acts[idx], ds.durs[idx], ds.labels[idx], ds.vocab, ds.schema, role)

    def filter(self, mask: np.ndarray) -> "SampleSet | None":
        if not mask.any():
            return None
        return replace(self, acts=self.acts[mask], durs=self.durs[mask],
                       labels=self.labels[mask])


def first_eos(acts: np.ndarray) -> np.ndarray:
    is_eos = acts == EOS
    return np.where(is_eos.any(axis=1), is_eos.argmax(axis=1), acts.shape[1]).astype(
        np.int64
    )


# ---------------------------------------------------------------------------
# earth-mover distance, exact in one dimension


def emd_1d(a: np.ndarray, b: np.ndarray) -> float:
    """Integral of |CDF_a - CDF_b| over the merged support.

    The CDF gap is accumulated in integer mass units (+n_b per a point, -n_a
    per b point, divided out once at the end) so identical multisets give an
    exact zero at any sample size.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("earth-mover distance needs non-empty samples")
    values = np.concatenate([a, b])
    weights = np.concatenate(
        [np.full(a.size, b.size, dtype=np.int64), np.full(b.size, -a.size, dtype=np.int64)]
    )
    order = np.argsort(values, kind="stable")
    v = values[order]
    cdf = np.cumsum(weights[order])[:-1]
    return float(np.sum(np.abs(cdf) * np.diff(v)) / (a.size * b.size))


# ---------------------------------------------------------------------------
# feature extraction


def participation_features(s: SampleSet) -> dict[str, np.ndarray]:
    """Per-schedule occurrence counts for each activity, plus sequence length."""
    k = first_eos(s.acts)
    L = s.acts.shape[1]
    interior = (np.arange(L)[None, :] >= 1) & (np.arange(L)[None, :] < k[:, None])
    out = {}
    for tok in s.vocab.activity_tokens():
        out[f"count:{s.vocab.name(tok)}"] = ((s.acts == tok) & interior).sum(axis=1)
    out["length"] = interior.sum(axis=1)
    return out


def transition_features(s: SampleSet) -> dict[str, np.ndarray]:
    """Per-schedule counts for every ordered activity pair."""
    k = first_eos(s.acts)
    L = s.acts.shape[1]
    pos = np.arange(L - 1)[None, :]
    valid = (pos >= 1) & (pos + 1 < k[:, None])
    left, right = s.acts[:, :-1], s.acts[:, 1:]
    out = {}
    for ta in s.vocab.activity_tokens():
        for tb in s.vocab.activity_tokens():
            name = f"2gram:{s.vocab.name(ta)}->{s.vocab.name(tb)}"
            out[name] = ((left == ta) & (right == tb) & valid).sum(axis=1)
    return out


def timing_features(s: SampleSet) -> dict[str, dict[str, np.ndarray]]:
    """Start time and duration samples per (activity, occurrence index).

    Keys look like "work0": the first work episode of a schedule. Start time
    is the cumulative fractional-day duration before the episode.
    """
    k = first_eos(s.acts)
    starts: dict[str, list[float]] = {}
    durs: dict[str, list[float]] = {}
    for i in range(len(s)):
        t = 0.0
        seen: dict[int, int] = {}
        for j in range(1, int(k[i])):
            tok = int(s.acts[i, j])
            occ = seen.get(tok, 0)
            seen[tok] = occ + 1
            name = f"{s.vocab.name(tok)}{occ}"
            starts.setdefault(name, []).append(t)
            durs.setdefault(name, []).append(float(s.durs[i, j]))
            t += float(s.durs[i, j])
    return {
        name: {"start": np.array(starts[name]), "duration": np.array(durs[name])}
        for name in starts
    }


# ---------------------------------------------------------------------------
# joint density report


@dataclass
class MetricRow:
    domain: str
    feature: str
    label: str
    category: str
    real_mean: float
    synth_mean: float
    emd: float
    n_real: int
    n_synth: int
    flag: str = ""


@dataclass
class MetricReport:
    rows: list[MetricRow] = field(default_factory=list)
    category_level: dict = field(default_factory=dict)  # (label, cat, domain) -> D_c
    label_level: dict = field(default_factory=dict)     # (label, domain) -> D_l
    joint: dict = field(default_factory=dict)           # domain -> D_joint
    combined: dict = field(default_factory=dict)        # domain -> unconditioned D
    flags: list = field(default_factory=list)


def _mean(x: np.ndarray) -> float:
    return float(np.mean(x)) if x.size else float("nan")


def _domain_rows(real: SampleSet, synth: SampleSet, label: str, category: str):
    """Per-feature EMD rows and weighted domain means for one (label, category)."""
    rows: list[MetricRow] = []
    means: dict[str, float] = {}

    for domain, extract in (
        ("participations", participation_features),
        ("transitions", transition_features),
    ):
        fr, fs = extract(real), extract(synth)
        emds = []
        for name in fr:
            e = emd_1d(fr[name], fs[name])
            rows.append(MetricRow(domain, name, label, category, _mean(fr[name]),
                                  _mean(fs[name]), e, len(real), len(synth)))
            emds.append(e)
        means[domain] = float(np.mean(emds))

    tr, ts = timing_features(real), timing_features(synth)
    num = den = 0.0
    for name in sorted(set(tr) | set(ts)):
        both = name in tr and name in ts
        w = (len(tr[name]["start"]) if name in tr else 0) + (
            len(ts[name]["start"]) if name in ts else 0
        )
        for part in ("start", "duration"):
            a = tr[name][part] if name in tr else np.array([])
            b = ts[name][part] if name in ts else np.array([])
            e = emd_1d(a, b) if both else float("nan")
            rows.append(MetricRow("timing", f"{name}.{part}", label, category,
                                  _mean(a), _mean(b), e, a.size, b.size,
                                  "" if both else "one_sided"))
            if both:
                num += w * e
                den += w
    means["timing"] = num / den if den else float("nan")
    return rows, means


def joint_density_report(real: SampleSet, synth: SampleSet,
                         schema: LabelSchema | None = None) -> MetricReport:
    if schema is None:
        schema = real.schema
    report = MetricReport()

    rows, means = _domain_rows(real, synth, COMBINED, COMBINED)
    report.rows.extend(rows)
    report.combined = means

    for li, name in enumerate(schema.names):
        cats = schema.categories(name)
        per_domain: dict[str, list[tuple[float, float]]] = {d: [] for d in DOMAINS}
        for ci, cat in enumerate(cats):
            r = real.filter(real.labels[:, li] == ci)
            s = synth.filter(synth.labels[:, li] == ci)
            if r is None and s is None:
                continue
            flag = ""
            weight = float(len(r)) if r is not None else 0.0
            if r is None:
                r = real  # fall back to the whole real side, flagged
                flag = "real_empty_fallback"
            if s is None:
                report.flags.append(f"{name}={cat}: no synthetic members")
                for d in DOMAINS:
                    report.category_level[(name, cat, d)] = float("nan")
                report.rows.append(MetricRow("(all)", "(all)", name, cat,
                                             float("nan"), float("nan"), float("nan"),
                                             len(r), 0, "synth_empty"))
                continue
            rows, means = _domain_rows(r, s, name, cat)
            if flag:
                report.flags.append(f"{name}={cat}: no real members, compared to full set")
                for row in rows:
                    row.flag = (row.flag + " " + flag).strip()
            report.rows.extend(rows)
            for d in DOMAINS:
                report.category_level[(name, cat, d)] = means[d]
                if np.isfinite(means[d]):
                    per_domain[d].append((weight, means[d]))
        for d in DOMAINS:
            pairs = per_domain[d]
            total = sum(w for w, _ in pairs)
            report.label_level[(name, d)] = (
                sum(w * v for w, v in pairs) / total if total > 0 else float("nan")
            )

    for d in DOMAINS:
        vals = [report.label_level[(name, d)] for name in schema.names]
        finite = [v for v in vals if np.isfinite(v)]
        report.joint[d] = float(np.mean(finite)) if finite else float("nan")
    return report


# ---------------------------------------------------------------------------
# feasibility and creativity


def feasibility_report(s: SampleSet) -> dict[str, float]:
    k = first_eos(s.acts)
    home = s.vocab.index("home")
    mergeable = {s.vocab.index(a) for a in MERGEABLE if a in s.vocab.activities}
    n = len(s)
    non_home = np.zeros(n, dtype=bool)
    consecutive = np.zeros(n, dtype=bool)
    for i in range(n):
        ki = int(k[i])
        if ki <= 1:
            non_home[i] = True
            continue
        if s.acts[i, 1] != home or s.acts[i, ki - 1] != home:
            non_home[i] = True
        row = s.acts[i, 1:ki]
        consecutive[i] = any(
            row[j] == row[j + 1] and int(row[j]) in mergeable
            for j in range(len(row) - 1)
        )
    return {
        "non_home_based": float(non_home.mean()),
        "consecutive": float(consecutive.mean()),
        "invalid": float((non_home | consecutive).mean()),
    }


def _canonical(s: SampleSet) -> list[tuple]:
    k = first_eos(s.acts)
    out = []
    for i in range(len(s)):
        ki = int(k[i])
        acts = tuple(int(t) for t in s.acts[i, 1:ki])
        bins = tuple(int(round(d * DURATION_BIN)) for d in s.durs[i, 1:ki])
        out.append((acts, bins))
    return out


def creativity_report(synth: SampleSet, train: SampleSet) -> dict[str, float]:
    """Duplicate mass within the synthetic set and copy mass from training."""
    canon = _canonical(synth)
    train_set = set(_canonical(train))
    homogeneity = 1.0 - len(set(canon)) / len(canon)
    conservatism = float(np.mean([c in train_set for c in canon]))
    return {"homogeneity": homogeneity, "conservatism": conservatism}


# ---------------------------------------------------------------------------
# conditional expected values


def default_expectation_features(vocab: ActivityVocab) -> list[str]:
    names = [vocab.name(t) for t in vocab.activity_tokens()]
    return ["trips"] + [f"freq:{n}" for n in names] + [f"dur:{n}" for n in names]


def _expectation_values(s: SampleSet, feature: str) -> np.ndarray:
    part = participation_features(s)
    if feature == "trips":
        return np.maximum(part["length"] - 1, 0)
    kind, _, act = feature.partition(":")
    if kind == "freq":
        return part[f"count:{act}"]
    if kind == "dur":
        tok = s.vocab.index(act)
        k = first_eos(s.acts)
        L = s.acts.shape[1]
        interior = (np.arange(L)[None, :] >= 1) & (np.arange(L)[None, :] < k[:, None])
        return np.where((s.acts == tok) & interior, s.durs, 0.0).sum(axis=1)
    raise ValueError(f"unknown feature {feature!r}")


def expectation_report(
    real: SampleSet,
    synth: SampleSet | None,
    features: list[str] | None = None,
    labels: list[str] | None = None,
) -> list[dict]:
    """Conditional means per label category, real and synthetic side by side."""
    if features is None:
        features = default_expectation_features(real.vocab)
    if labels is None:
        labels = real.schema.names
    rows = []
    for feature in features:
        rv = _expectation_values(real, feature)
        sv = _expectation_values(synth, feature) if synth is not None else None
        rows.append({
            "feature": feature, "label": COMBINED, "category": COMBINED,
            "real_mean": _mean(rv),
            "synth_mean": _mean(sv) if sv is not None else float("nan"),
            "n_real": rv.size, "n_synth": 0 if sv is None else sv.size, "flag": "",
        })
        for name in labels:
            li = real.schema.names.index(name)
            for ci, cat in enumerate(real.schema.categories(name)):
                rm = real.labels[:, li] == ci
                sm = synth.labels[:, li] == ci if synth is not None else None
                flag = "" if rm.any() else "real_empty"
                rows.append({
                    "feature": feature, "label": name, "category": cat,
                    "real_mean": _mean(rv[rm]),
                    "synth_mean": _mean(sv[sm]) if sv is not None else float("nan"),
                    "n_real": int(rm.sum()),
                    "n_synth": 0 if sm is None else int(sm.sum()),
                    "flag": flag,
                })
    return rows


def draw_eval_labels(real_labels: np.ndarray, n: int, rng: np.random.Generator):
    """Label vectors for a synthetic evaluation set, resampled from the real set."""
    idx = rng.integers(0, len(real_labels), size=n)
    return real_labels[idx]


# ---------------------------------------------------------------------------
# CSV output


SUMMARY_ROWS = ("Participations", "Transitions", "Timing",
                "Invalid", "Homogeneity", "Conservatism")


def summary_rows(report: MetricReport, feasibility: dict, creativity: dict) -> list[tuple]:
    return [
        ("Participations", report.joint["participations"]),
        ("Transitions", report.joint["transitions"]),
        ("Timing", report.joint["timing"]),
        ("Invalid", feasibility["invalid"]),
        ("Homogeneity", creativity["homogeneity"]),
        ("Conservatism", creativity["conservatism"]),
    ]


def write_report_csv(path: str | Path, report: MetricReport,
                     config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["domain", "feature", "label", "category", "real_mean",
                    "synth_mean", "emd", "n_real", "n_synth", "flag"])
        for r in report.rows:
            w.writerow([r.domain, r.feature, r.label, r.category, repr(r.real_mean),
                        repr(r.synth_mean), repr(r.emd), r.n_real, r.n_synth, r.flag])


def write_summary_csv(path: str | Path, report: MetricReport,
                      feasibility: dict, creativity: dict,
                      config_hash: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash:
            fh.write(f"# config_hash: {config_hash}\n")
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name, value in summary_rows(report, feasibility, creativity):
            w.writerow([name, repr(float(value))])
