import json
from collections import Counter
from dataclasses import replace
from math import comb

import numpy as np
import pytest

from attnflow import IntegrationOptions, classify_equilibrium, integrate
from attnflow.errors import ContractViolation, GenerationFailure
from attnflow.geometry import sample_uniform_sphere
from attnflow.harness import CensusRecord, ExperimentSpec, random_instance, run_census, scan_bipartite
from attnflow.harness.cli import main
from attnflow.harness.output import (OutputError, emit_outputs, parse_jsonl, read_jsonl,
                                     records_to_jsonl, summary_counts, summary_csv, trajectory_svg,
                                     write_svg)
from attnflow.harness.scan import stable_count
from attnflow.stability import STABLE


# -- instances ----------------------------------------------------------------

def test_random_instance_deterministic():
    a, b = random_instance(5, 7, 0.5, seed=123), random_instance(5, 7, 0.5, seed=123)
    for M in ("Q", "K", "V"):
        assert np.array_equal(getattr(a, M), getattr(b, M))
    assert a.beta == 0.5 and a.n == 7
    assert not np.array_equal(a.Q, random_instance(5, 7, 0.5, seed=124).Q)


def test_random_instance_assumption_holds_over_many_seeds():
    for seed in range(1000):
        p = random_instance(20, 4, 1.0, seed=seed)
        lam = p.spectrum().eigenvalues
        assert lam[0] > 0 and lam[0] - lam[1] > 1e-3
        assert np.max(np.abs(p.V - p.V.T)) < 1e-15


def test_random_instance_failure_cap():
    with pytest.raises(GenerationFailure):
        random_instance(3, 2, seed=0, gap=1e6)
    with pytest.raises(ContractViolation):
        random_instance(1, 2)


# -- census -------------------------------------------------------------------

def small_spec(**kw):
    base = dict(d=3, n=6, instances=2, runs_per_instance=3, seed=5)
    base.update(kw)
    return ExperimentSpec(**base)


def test_spec_validation_and_dict_roundtrip():
    with pytest.raises(ContractViolation):
        ExperimentSpec(instances=0)
    with pytest.raises(ContractViolation):
        ExperimentSpec(n=21, scan="exhaustive")
    with pytest.raises(ContractViolation):
        ExperimentSpec(system="rnn")
    with pytest.raises(ContractViolation):
        ExperimentSpec.from_dict({"nope": 1})
    s = small_spec(integration=IntegrationOptions(h=0.1))
    assert ExperimentSpec.from_dict(s.to_dict()) == s


def test_census_records_well_formed():
    recs = list(run_census(small_spec()))
    assert [(r.instance, r.run) for r in recs] == [(i, r) for i in range(2) for r in range(3)]
    allowed = {"consensus", "bipartite", "m_clustering", "polygonal", "near_equilibrium_unclassified"}
    for r in recs:
        assert r.termination in ("converged", "max_time")
        if r.converged:
            assert r.cls in allowed and r.residual < 1e-9


def test_census_beta_zero_reaches_principal_consensus():
    recs = list(run_census(small_spec(beta=0.0, system="self_attention", instances=3, runs_per_instance=4,
                                      integration=IntegrationOptions(h=0.1, max_time=5000))))
    conv = [r for r in recs if r.converged]
    assert conv and all(r.cls == "consensus" and r.k == 1 for r in conv)


def test_census_failure_recorded_not_raised():
    # a huge step overshoots and collapses a token; the sweep continues
    spec = small_spec(instances=1, runs_per_instance=2, beta=50.0,
                      integration=IntegrationOptions(h=0.5, max_time=50))
    recs = list(run_census(spec))
    assert len(recs) == 2
    for r in recs:
        assert r.termination in ("converged", "max_time", "degenerate", "failed")


def test_census_worker_count_does_not_change_output():
    spec = small_spec(instances=2, runs_per_instance=2)
    serial = [replace(r, wall_ms=0.0) for r in run_census(spec)]
    pooled = [replace(r, wall_ms=0.0) for r in run_census(replace(spec, workers=2))]
    assert records_to_jsonl(serial) == records_to_jsonl(pooled)


def test_class_counts_invariant_under_token_permutation():
    p = random_instance(3, 8, 1.0, seed=2)
    g = np.random.default_rng(0)
    a, b = Counter(), Counter()
    for run in range(6):
        X0 = sample_uniform_sphere(3, 8, 50 + run).tokens
        for X, tally in ((X0, a), (X0[g.permutation(8)], b)):
            tr = integrate(X, "self_attention", p)
            if tr.termination == "converged":
                r = classify_equilibrium(tr.states[-1], p)
                tally[(r.cls, r.k, r.n1, r.m)] += 1
    assert a == b


def test_multistability_witness():
    # statistic: some instance reaches two different stable classes
    spec = ExperimentSpec(d=3, n=8, instances=15, runs_per_instance=4, seed=1)
    per_instance: dict[int, set] = {}
    for r in run_census(spec):
        if r.converged and r.verdict == STABLE:
            per_instance.setdefault(r.instance, set()).add((r.label(), r.k))
    assert any(len(s) >= 2 for s in per_instance.values())


# -- scan ---------------------------------------------------------------------

def test_exhaustive_scan_counts():
    p = random_instance(4, 10, 1.0, seed=0)
    rows = scan_bipartite(p, "exhaustive")
    assert sum(r.count for r in rows) == 4 * 2**10
    assert len(rows) == 4 * 11
    assert all(r.verdict == STABLE for r in rows if r.k == 1 and r.is_consensus)
    assert 2 <= stable_count(rows) <= 4096


def test_pattern_scan_agrees_with_grouped_scan():
    p = random_instance(3, 5, 1.0, seed=4)
    grouped = {(r.k, r.n1): r.verdict for r in scan_bipartite(p, "exhaustive")}
    raw = scan_bipartite(p, "patterns")
    assert len(raw) == 3 * 2**5
    by_pattern = {(r.k, r.pattern): r.verdict for r in raw}
    for r in raw:
        assert r.verdict == grouped[(r.k, r.n1)]
        assert by_pattern[(r.k, tuple(-s for s in r.pattern))] == r.verdict


def test_group_counts_sum():
    for n in range(1, 21):
        assert sum(comb(n, n1) for n1 in range(n + 1)) == 2**n


def test_sample_scan():
    p = random_instance(4, 12, 1.0, seed=1)
    rows = scan_bipartite(p, "sample", samples=30, seed=9)
    assert len(rows) == 120 and all(len(r.pattern) == 12 for r in rows)
    assert rows == scan_bipartite(p, "sample", samples=30, seed=9)
    with pytest.raises(ContractViolation):
        scan_bipartite(random_instance(2, 21, seed=0), "exhaustive")


# -- output -------------------------------------------------------------------

def fixture_records():
    return [
        CensusRecord(0, 0, 11, "converged", "consensus", 1, None, None, 1, 1, -0.5, "stable", 1e-10, 40, 1.5),
        CensusRecord(0, 1, 12, "converged", "bipartite", 3, 2, 4, 2, 2, -0.25, "stable", 2e-10, 80, 2.0),
        CensusRecord(1, 0, 13, "converged", "m_clustering", None, None, None, 3, 3, -0.1, "stable", 3e-10, 90, 1.0),
        CensusRecord(1, 1, 14, "max_time", steps=10000, residual=1e-4),
        CensusRecord(2, 0, 15, "degenerate", error="DegenerateState: token 0"),
    ]


def test_jsonl_roundtrip(tmp_path):
    recs = fixture_records()
    path = tmp_path / "out.jsonl"
    emit_outputs(recs, jsonl=path)
    assert read_jsonl(path) == recs
    first = json.loads(path.read_text().splitlines()[0])
    assert first["schema"] == 1 and first["class"] == "consensus"
    assert list(first)[:5] == ["schema", "instance", "run", "seed", "class"]


def test_jsonl_rejects_other_schema():
    line = records_to_jsonl(fixture_records()[:1]).replace('"schema": 1', '"schema": 2')
    with pytest.raises(ContractViolation):
        parse_jsonl(line)


def test_csv_counts_converged_runs():
    recs = fixture_records()
    text = summary_csv(recs)
    lines = text.splitlines()
    assert lines[0] == "class,k,count"
    assert sum(int(l.rsplit(",", 1)[1]) for l in lines[1:]) == sum(r.converged for r in recs)
    assert ("3-clustering", None, 1) in summary_counts(recs)
    assert "bipartite,3,1" in lines


def test_svg_consensus_endpoints():
    p = random_instance(3, 7, 1.0, seed=0)
    tr = integrate(sample_uniform_sphere(3, 7, 1), "self_attention", p, IntegrationOptions(record_stride=20))
    svg = trajectory_svg(tr.states)
    assert 'viewBox="0 0 800 800"' in svg
    assert svg.count('class="endpoint"') == 7
    assert svg.count("<polyline") == 7
    assert svg.count('class="sphere"') == 1


def test_io_errors_name_the_path(tmp_path):
    bad = tmp_path / "missing" / "x.jsonl"
    with pytest.raises(OutputError, match="missing"):
        emit_outputs(fixture_records(), jsonl=bad)
    with pytest.raises(OutputError, match="missing"):
        write_svg(bad, np.zeros((1, 1, 3)) + [1, 0, 0])


# -- CLI ----------------------------------------------------------------------

def test_cli_census_bytes_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        path = tmp_path / f"{name}.jsonl"
        assert main(["census", "--d", "3", "--n", "5", "--instances", "2", "--runs", "2",
                     "--seed", "9", "--out", str(path), "--no-timing"]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    assert (tmp_path / "a.jsonl.csv").read_text().startswith("class,k,count\n")
    assert "created" in json.loads((tmp_path / "a.jsonl.meta.json").read_text())


def test_cli_config_file_and_overrides(tmp_path, capsys):
    cfg = tmp_path / "spec.json"
    cfg.write_text(json.dumps({"d": 3, "n": 4, "beta": 0.5, "integration": {"h": 0.1}}))
    assert main(["simulate", "--config", str(cfg), "--n", "5", "--seed", "3"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert len(doc["final"]) == 5 and doc["termination"] == "converged"


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["bogus"]) == 1
    assert main(["simulate", "--d", "1"]) == 1
    assert main(["simulate", "--h", "2"]) == 1
    assert main(["simulate", "--config", str(tmp_path / "none.json")]) == 3
    assert main(["simulate", "--d", "3", "--n", "4", "--out", str(tmp_path / "no" / "x.json")]) == 3
    capsys.readouterr()


def test_cli_numerical_failure_exit_code(monkeypatch, capsys):
    import attnflow.harness.cli as cli
    from attnflow.errors import DegenerateState

    def boom(*a, **k):
        raise DegenerateState("token 0 has norm 0")
    monkeypatch.setattr(cli, "integrate", boom)
    assert main(["simulate", "--d", "3", "--n", "4"]) == 2
    assert "numerical failure" in capsys.readouterr().err


def test_cli_scan_spectrum_certify(tmp_path, capsys):
    assert main(["scan", "--d", "4", "--n", "10", "--seed", "0"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["total"] == 4096
    assert main(["spectrum", "--d", "3", "--n", "4", "--k", "2", "--n1", "3"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert sum(e["multiplicity"] for e in doc["entries"]) == 12 and "verdict" in doc
    assert main(["certify", "--d", "3", "--n", "6", "--seed", "0"]) == 0
    assert "report" in json.loads(capsys.readouterr().out)
