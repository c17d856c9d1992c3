import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from actsched import evalsuite, synthpop
from actsched.data import build_dataset
from actsched.evalsuite import SampleSet, emd_1d
from actsched.vocab import ActivityVocab, LabelSchema

VOCAB = ActivityVocab(("education", "home", "shop", "work"))
EDU, HOME, SHOP, WORK = 2, 3, 4, 5
SCHEMA1 = LabelSchema([("g", ("a", "b"))])


def make_set(rows, labels, role, schema=SCHEMA1, L=6):
    acts = np.full((len(rows), L), 1, dtype=np.int64)
    durs = np.zeros((len(rows), L))
    for i, row in enumerate(rows):
        acts[i, 0] = 0
        for j, (tok, d) in enumerate(row, start=1):
            acts[i, j] = tok
            durs[i, j] = d
    return SampleSet(acts, durs, np.asarray(labels, dtype=np.int64).reshape(len(rows), -1),
                     VOCAB, schema, role)


REAL_ROWS = [
    [(HOME, 0.5), (WORK, 0.5)],
    [(HOME, 1.0)],
    [(HOME, 0.25), (SHOP, 0.25), (HOME, 0.5)],
    [(HOME, 0.5), (SHOP, 0.5)],
]
SYNTH_ROWS = [
    [(HOME, 0.5), (WORK, 0.5)],
    [(HOME, 0.25), (WORK, 0.75)],
    [(HOME, 1.0)],
    [(HOME, 0.25), (SHOP, 0.25), (HOME, 0.5)],
]
TOY_LABELS = [[0], [0], [1], [1]]


def toy_sets():
    return (make_set(REAL_ROWS, TOY_LABELS, "real"),
            make_set(SYNTH_ROWS, TOY_LABELS, "synthetic"))


# -- earth-mover distance ----------------------------------------------------


def test_emd_identical_multisets():
    assert emd_1d([3.0, 1.0, 1.0], [1.0, 3.0, 1.0]) == 0.0


def test_emd_unit_mass_unit_distance():
    assert emd_1d([0.0], [1.0]) == 1.0


def test_emd_two_point_instance():
    assert emd_1d([0.0, 0.0], [0.0, 1.0]) == 0.5


def test_emd_rejects_empty():
    with pytest.raises(ValueError):
        emd_1d([], [1.0])


def ot_bruteforce(a, b):
    na, nb = len(a), len(b)
    c = np.abs(np.subtract.outer(a, b)).ravel()
    A = np.zeros((na + nb, na * nb))
    for i in range(na):
        A[i, i * nb : (i + 1) * nb] = 1.0
    for j in range(nb):
        A[na + j, j::nb] = 1.0
    rhs = np.concatenate([np.full(na, 1.0 / na), np.full(nb, 1.0 / nb)])
    res = linprog(c, A_eq=A, b_eq=rhs, method="highs")
    assert res.success
    return res.fun


def test_emd_matches_bruteforce_transport():
    rng = np.random.default_rng(7)
    for _ in range(50):
        a = rng.normal(size=rng.integers(1, 8))
        b = rng.normal(size=rng.integers(1, 8))
        assert emd_1d(a, b) == pytest.approx(ot_bruteforce(a, b), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(-50, 50), min_size=1, max_size=12),
    st.lists(st.floats(-50, 50), min_size=1, max_size=12),
    st.lists(st.floats(-50, 50), min_size=1, max_size=12),
)
def test_emd_metric_properties(a, b, c):
    a, b, c = map(np.array, (a, b, c))
    dab, dba = emd_1d(a, b), emd_1d(b, a)
    assert dab >= 0.0
    assert dab == pytest.approx(dba, rel=1e-9, abs=1e-12)
    if len(a) == len(b) and np.array_equal(np.sort(a), np.sort(b)):
        assert dab == 0.0
    dac, dcb = emd_1d(a, c), emd_1d(c, b)
    assert dab <= dac + dcb + 1e-9


# -- feature extraction ------------------------------------------------------


def test_participation_hand_example():
    s = make_set([[(HOME, 0.4), (WORK, 0.3), (HOME, 0.3)]], [[0]], "real")
    f = evalsuite.participation_features(s)
    assert f["count:home"][0] == 2
    assert f["count:work"][0] == 1
    assert f["count:shop"][0] == 0
    assert f["count:education"][0] == 0
    assert f["length"][0] == 3


def test_participation_all_home_day():
    s = make_set([[(HOME, 1.0)]], [[0]], "real")
    f = evalsuite.participation_features(s)
    assert f["count:home"][0] == 1
    assert f["length"][0] == 1


def test_transition_hand_examples():
    s = make_set([[(HOME, 0.4), (WORK, 0.3), (HOME, 0.3)], [(HOME, 1.0)]], [[0], [0]], "real")
    f = evalsuite.transition_features(s)
    assert len(f) == 16
    np.testing.assert_array_equal(f["2gram:home->work"], [1, 0])
    np.testing.assert_array_equal(f["2gram:work->home"], [1, 0])
    assert all(counts.sum() == 0 for name, counts in f.items()
               if name not in ("2gram:home->work", "2gram:work->home"))


def test_timing_hand_example():
    s = make_set([[(HOME, 0.5), (WORK, 0.5)]], [[0]], "real")
    t = evalsuite.timing_features(s)
    assert t["work0"]["start"][0] == 0.5
    assert t["work0"]["duration"][0] == 0.5
    assert t["home0"]["start"][0] == 0.0
    assert t["home0"]["duration"][0] == 0.5


def test_timing_occurrence_indexing_and_home_start():
    real, _ = toy_sets()
    t = evalsuite.timing_features(real)
    np.testing.assert_array_equal(t["home0"]["start"], 0.0)
    assert t["home1"]["start"][0] == 0.5
    assert t["home1"]["duration"][0] == 0.5


def test_participation_matches_degenerate_generator():
    spec = synthpop.default_spec(seed=2)
    pairs = synthpop.generate_population(spec, 4000)
    ds, dropped = build_dataset(
        [p[0] for p in pairs], {p[0].pid: p[1] for p in pairs},
        schema=spec.schema(),
    )
    assert dropped == 0
    s = SampleSet.from_dataset(ds, role="real")
    f = evalsuite.participation_features(s)
    table = synthpop.analytic_expectations(spec)
    li = spec.schema().names.index("work_status")
    for ci, cat in enumerate(("employed", "unemployed")):
        mask = s.labels[:, li] == ci
        emp = (f["count:work"][mask] > 0).mean()
        expect = table[cat]["participation"]["work"]
        se = max(np.sqrt(expect * (1 - expect) / mask.sum()), 1e-6)
        assert abs(emp - expect) <= 4 * se


# -- joint density report ----------------------------------------------------


def test_self_comparison_is_identically_zero():
    real, _ = toy_sets()
    synth = make_set(REAL_ROWS, TOY_LABELS, "synthetic")
    rep = evalsuite.joint_density_report(real, synth)
    for r in rep.rows:
        assert r.emd == 0.0
    for d in evalsuite.DOMAINS:
        assert rep.combined[d] == 0.0
        assert rep.joint[d] == 0.0


def test_toy_rollups_match_hand_computation():
    real, synth = toy_sets()
    rep = evalsuite.joint_density_report(real, synth)
    cl = rep.category_level
    assert cl[("g", "a", "participations")] == pytest.approx(0.2, rel=1e-12)
    assert cl[("g", "a", "transitions")] == pytest.approx(0.5 / 16, rel=1e-12)
    assert cl[("g", "a", "timing")] == pytest.approx(9 / 56, rel=1e-12)
    assert cl[("g", "b", "participations")] == pytest.approx(0.2, rel=1e-12)
    assert cl[("g", "b", "transitions")] == pytest.approx(0.5 / 16, rel=1e-12)
    assert cl[("g", "b", "timing")] == pytest.approx(7 / 72, rel=1e-12)
    ll = rep.label_level
    assert ll[("g", "participations")] == pytest.approx(0.2, rel=1e-12)
    assert ll[("g", "transitions")] == pytest.approx(0.5 / 16, rel=1e-12)
    assert ll[("g", "timing")] == pytest.approx(65 / 504, rel=1e-12)
    for d in evalsuite.DOMAINS:
        assert rep.joint[d] == ll[("g", d)]
    assert rep.combined["participations"] == pytest.approx(0.1, rel=1e-12)
    assert rep.combined["transitions"] == pytest.approx(0.5 / 16, rel=1e-12)
    assert rep.combined["timing"] == pytest.approx(0.0625, rel=1e-12)


def test_label_rollup_is_weighted_mean_of_categories():
    real, synth = toy_sets()
    rep = evalsuite.joint_density_report(real, synth)
    for d in evalsuite.DOMAINS:
        manual = 0.5 * rep.category_level[("g", "a", d)] + 0.5 * rep.category_level[("g", "b", d)]
        assert rep.label_level[("g", d)] == pytest.approx(manual, rel=1e-12)


def test_single_category_label_collapses_to_combined():
    schema = LabelSchema([("only", ("x",))])
    real = make_set(REAL_ROWS, [[0]] * 4, "real", schema=schema)
    synth = make_set(SYNTH_ROWS, [[0]] * 4, "synthetic", schema=schema)
    rep = evalsuite.joint_density_report(real, synth)
    for d in evalsuite.DOMAINS:
        assert rep.label_level[("only", d)] == rep.category_level[("only", "x", d)]
        assert rep.label_level[("only", d)] == pytest.approx(rep.combined[d], rel=1e-12)


def test_missing_synth_category_is_flagged_and_excluded():
    real, _ = toy_sets()
    synth = make_set(SYNTH_ROWS[:2], [[0], [0]], "synthetic")  # category b absent
    rep = evalsuite.joint_density_report(real, synth)
    assert any("no synthetic members" in f for f in rep.flags)
    assert np.isnan(rep.category_level[("g", "b", "participations")])
    # rollup renormalizes onto category a alone
    assert rep.label_level[("g", "participations")] == pytest.approx(
        rep.category_level[("g", "a", "participations")], rel=1e-12
    )


def test_report_rows_order_invariance():
    real, synth = toy_sets()
    perm = [2, 0, 3, 1]
    synth_shuffled = make_set([SYNTH_ROWS[i] for i in perm],
                              [TOY_LABELS[i] for i in perm], "synthetic")
    a = evalsuite.joint_density_report(real, synth)
    b = evalsuite.joint_density_report(real, synth_shuffled)
    assert a.joint == b.joint
    assert a.combined == b.combined


# -- feasibility -------------------------------------------------------------


def test_feasibility_flags_non_home_start():
    s = make_set([[(WORK, 0.5), (HOME, 0.5)]], [[0]], "synthetic")
    rep = evalsuite.feasibility_report(s)
    assert rep["non_home_based"] == 1.0
    assert rep["consecutive"] == 0.0
    assert rep["invalid"] == 1.0


def test_feasibility_flags_consecutive_mergeable():
    s = make_set([[(HOME, 0.2), (WORK, 0.3), (WORK, 0.3), (HOME, 0.2)]], [[0]], "synthetic")
    rep = evalsuite.feasibility_report(s)
    assert rep["consecutive"] == 1.0
    assert rep["non_home_based"] == 0.0


def test_feasibility_keeps_repeated_non_mergeable():
    s = make_set([[(HOME, 0.2), (SHOP, 0.3), (SHOP, 0.3), (HOME, 0.2)]], [[0]], "synthetic")
    assert evalsuite.feasibility_report(s)["invalid"] == 0.0


def test_feasibility_zero_on_generated_population():
    spec = synthpop.default_spec(seed=3)
    pairs = synthpop.generate_population(spec, 300)
    ds, _ = build_dataset([p[0] for p in pairs], {p[0].pid: p[1] for p in pairs},
                          schema=spec.schema())
    rep = evalsuite.feasibility_report(SampleSet.from_dataset(ds, role="real"))
    assert rep == {"non_home_based": 0.0, "consecutive": 0.0, "invalid": 0.0}


# -- creativity --------------------------------------------------------------


def test_homogeneity_of_identical_schedules():
    rows = [[(HOME, 0.5), (WORK, 0.5)]] * 4
    synth = make_set(rows, [[0]] * 4, "synthetic")
    train = make_set([[(HOME, 1.0)]], [[0]], "real")
    rep = evalsuite.creativity_report(synth, train)
    assert rep["homogeneity"] == 0.75
    assert rep["conservatism"] == 0.0


def test_homogeneity_of_distinct_schedules():
    real, synth = toy_sets()
    rep = evalsuite.creativity_report(synth, real)
    assert rep["homogeneity"] == 0.0


def test_conservatism_of_copied_set():
    real, _ = toy_sets()
    synth = make_set(REAL_ROWS, TOY_LABELS, "synthetic")
    rep = evalsuite.creativity_report(synth, real)
    assert rep["conservatism"] == 1.0


def test_creativity_bins_nearby_durations_together():
    a = [[(HOME, 0.5), (WORK, 0.5)]]
    b = [[(HOME, 0.5 + 0.001), (WORK, 0.5 - 0.001)]]  # inside one 10-minute bin
    synth = make_set(a + b, [[0], [0]], "synthetic")
    assert evalsuite.creativity_report(synth, make_set(a, [[0]], "real"))["homogeneity"] == 0.5


# -- expectations ------------------------------------------------------------


def test_expectation_unconditional_is_weighted_category_mean():
    real, synth = toy_sets()
    rows = evalsuite.expectation_report(real, synth)
    by = {(r["feature"], r["label"], r["category"]): r for r in rows}
    for feature in ("trips", "freq:home", "dur:work"):
        combined = by[(feature, evalsuite.COMBINED, evalsuite.COMBINED)]
        a = by[(feature, "g", "a")]
        b = by[(feature, "g", "b")]
        manual = (a["real_mean"] * a["n_real"] + b["real_mean"] * b["n_real"]) / 4
        assert combined["real_mean"] == pytest.approx(manual, rel=1e-12)


def test_expectation_trips_hand_value():
    real, _ = toy_sets()
    rows = evalsuite.expectation_report(real, None, features=["trips"])
    combined = [r for r in rows if r["category"] == evalsuite.COMBINED][0]
    # lengths 2, 1, 3, 2 -> trips 1, 0, 2, 1
    assert combined["real_mean"] == 1.0


def test_expectation_matches_generator_oracle():
    spec = synthpop.default_spec(seed=8)
    pairs = synthpop.generate_population(spec, 20000)
    ds, _ = build_dataset([p[0] for p in pairs], {p[0].pid: p[1] for p in pairs},
                          schema=spec.schema())
    s = SampleSet.from_dataset(ds, role="real")
    rows = evalsuite.expectation_report(s, None, features=["dur:work"], labels=["work_status"])
    table = synthpop.analytic_expectations(spec)
    for r in rows:
        if r["category"] == "employed":
            assert r["real_mean"] == pytest.approx(
                table["employed"]["mean_duration"]["work"], abs=0.01
            )


def test_expectation_empty_category_flagged():
    schema = LabelSchema([("g", ("a", "b", "zz"))])
    real = make_set(REAL_ROWS, TOY_LABELS, "real", schema=schema)
    rows = evalsuite.expectation_report(real, None, features=["trips"])
    flagged = [r for r in rows if r["category"] == "zz"]
    assert flagged and all(r["flag"] == "real_empty" for r in flagged)
    assert all(np.isnan(r["real_mean"]) for r in flagged)


# -- CSV ---------------------------------------------------------------------


def test_csv_writers_roundtrip_values(tmp_path):
    real, synth = toy_sets()
    rep = evalsuite.joint_density_report(real, synth)
    feas = evalsuite.feasibility_report(synth)
    creat = evalsuite.creativity_report(synth, real)
    long_path = tmp_path / "report.csv"
    summary_path = tmp_path / "summary.csv"
    evalsuite.write_report_csv(long_path, rep)
    evalsuite.write_summary_csv(summary_path, rep, feas, creat)
    import csv as csvmod

    with open(summary_path) as fh:
        rows = list(csvmod.DictReader(fh))
    assert [r["metric"] for r in rows] == list(evalsuite.SUMMARY_ROWS)
    got = {r["metric"]: float(r["value"]) for r in rows}
    assert got["Participations"] == rep.joint["participations"]
    assert got["Invalid"] == feas["invalid"]
    with open(long_path) as fh:
        n_rows = sum(1 for _ in fh) - 1
    assert n_rows == len(rep.rows)
