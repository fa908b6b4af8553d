import json
import os
from dataclasses import replace

import numpy as np
import pytest

from margda import cli, data, harness
from margda.models import ModelSpec


@pytest.fixture
def three_domains(tmp_path):
    domains = data.synth_domains(0, 3, 6, 3, 10, 3.0, 0.3, names=["a", "b", "c"])
    path = str(tmp_path / "three.csv")
    data.write_dense(data.concat(domains), path)
    return path


def _cfg(path, tmp_path, **kw):
    base = dict(paths=[path], models=["BL", "S1", "J12"], classifiers=["ridge", "nn"], seeds=[0, 1],
                output=str(tmp_path / "out"), record_timing=False)
    base.update(kw)
    return harness.ExperimentConfig(**base)


def test_task_pairs_counts():
    assert len(harness.task_pairs(["a", "b", "c"])) == 6
    assert len(harness.task_pairs(["a", "b", "c", "d"])) == 12
    assert ("a", "b") in harness.task_pairs(["a", "b"]) and ("b", "a") in harness.task_pairs(["a", "b"])


def test_cell_seed_stable():
    assert harness.cell_seed(0, "a", "b") == harness.cell_seed(0, "a", "b")
    assert harness.cell_seed(0, "a", "b") != harness.cell_seed(0, "b", "a")
    assert harness.cell_seed(0, "a", "b") != harness.cell_seed(1, "a", "b")


def test_parse_seeds():
    assert harness.parse_seeds("0,1,2") == [0, 1, 2]
    assert harness.parse_seeds("3-6") == [3, 4, 5, 6]
    assert harness.parse_seeds("0, 5-6") == [0, 5, 6]


def test_run_one_record_per_cell(three_domains, tmp_path):
    cfg = _cfg(three_domains, tmp_path, scenario="SS")
    res = harness.run(cfg)
    assert res.ok
    assert len(res.records) == 6 * 3 * 2 * 2
    keys = [r.key() for r in res.records]
    assert len(set(keys)) == len(keys) and keys == sorted(keys)
    assert all(0.0 <= r.accuracy <= 1.0 for r in res.records)


def test_aggregate_recomputable_from_csv(three_domains, tmp_path):
    cfg = _cfg(three_domains, tmp_path)
    res = harness.run(cfg)
    csv_path, json_path = harness.emit(res.records, res.aggregate, cfg.output)
    rows = harness.read_records_csv(csv_path)
    doc = json.load(open(json_path))
    for cell in doc["aggregate"].values():
        accs = [float(r["accuracy"]) for r in rows if r["model"] == cell["model"] and r["classifier"] == cell["classifier"]]
        assert cell["n"] == len(accs)
        assert cell["mean"] == pytest.approx(float(harness.fmt(np.mean(accs))), rel=1e-12)
        assert cell["std"] == pytest.approx(float(harness.fmt(np.std(accs))), rel=1e-12, abs=1e-12)


def test_emit_single_record(tmp_path):
    rec = harness.ResultRecord("a", "b", "US", "S1", "ridge", 0, 2 / 3, 1, 0.0123, True)
    csv_path, json_path = harness.emit([rec], harness.aggregate([rec]), str(tmp_path / "o"))
    lines = open(csv_path).read().splitlines()
    assert len(lines) == 2
    assert lines[0] == ",".join(harness.CSV_HEADER)
    assert lines[1] == "a,b,US,S1,ridge,0,0.666667,1,12.3,true"
    assert os.path.exists(json_path)


def test_csv_byte_identical_across_reruns_and_jobs(three_domains, tmp_path):
    cfg = _cfg(three_domains, tmp_path, scenario="SUP", models=["S1", "J12D"])
    first = harness.records_csv(harness.run(cfg).records)
    second = harness.records_csv(harness.run(cfg).records)
    parallel = harness.records_csv(harness.run(replace(cfg, jobs=2)).records)
    assert first == second == parallel


def test_failures_are_tagged_not_fatal(three_domains, tmp_path):
    # class-means coupling has no labeled target data in US
    cfg = _cfg(three_domains, tmp_path, scenario="US", models=["S1", "S1C"], seeds=[0])
    res = harness.run(cfg)
    assert not res.ok
    assert len(res.failures) == 6
    assert all(f.model == "S1C" and "NoSharedClasses" in f.error for f in res.failures)
    assert len(res.records) == 6 * 2


def test_harness_never_trains_on_test_rows(three_domains, tmp_path, monkeypatch):
    seen = []
    real_fit = harness.fit_model

    def spy(spec, split):
        seen.append(split)
        return real_fit(spec, split)

    monkeypatch.setattr(harness, "fit_model", spy)
    for scenario in data.SCENARIOS:
        harness.run(_cfg(three_domains, tmp_path, scenario=scenario, models=["S1"], classifiers=["ridge"]))
    assert seen
    for split in seen:
        assert np.intersect1d(split.test_rows, split.labeled_target_rows).size == 0
        for row in split.x_test:
            assert not np.any(np.all(np.isclose(split.x_labeled, row, rtol=0, atol=1e-12), axis=1))
        if split.scenario == "SUP":
            for row in split.x_test:
                assert not np.any(np.all(np.isclose(split.x_all, row, rtol=0, atol=1e-12), axis=1))


def test_validate_reports(three_domains, tmp_path):
    ok = harness.validate(_cfg(three_domains, tmp_path))
    assert ok.ok and ok.violations == []
    assert ok.resolved["labeled_per_class"] == 3
    assert "no violations" in ok.format()
    missing = harness.validate(_cfg(str(tmp_path / "nope.csv"), tmp_path))
    assert any("nope.csv" in v for v in missing.violations)
    short = harness.validate(_cfg(three_domains, tmp_path, scenario="SUP", labeled_per_class=11))
    assert any(v.startswith("InsufficientTargetLabels") for v in short.violations)
    bad = harness.validate(_cfg(three_domains, tmp_path, models=["S9"], classifiers=["svm"], seeds=[]))
    assert len(bad.violations) >= 3


def test_validate_needs_two_domains(tmp_path):
    path = str(tmp_path / "one.csv")
    data.write_dense(data.synth_domains(0, 1, 3, 2, 5, 0.0, 0.0, names=["solo"])[0], path)
    report = harness.validate(_cfg(path, tmp_path))
    assert any("at least 2 domains" in v for v in report.violations)


def test_load_config(tmp_path, three_domains):
    ini = tmp_path / "exp.ini"
    ini.write_text(
        "[data]\npaths = three.csv\nformat = dense\n"
        "[experiment]\nscenario = sup\nmodels = S1, J12D\nclassifiers = ridge,dscm\nseeds = 0-2\n"
        "standardize = no\ncoupling_rule = paper\noutput = res\ntiming = off\n"
        "[hyperparameters]\np = 0.9\nlambda = 2\ngamma = 0.5\n"
        "[sweep]\nlambda = 0.1, 1\n"
    )
    cfg = harness.load_config(str(ini))
    assert cfg.paths == [three_domains]
    assert cfg.scenario == "SUP" and cfg.models == ["S1", "J12D"] and cfg.seeds == [0, 1, 2]
    assert cfg.standardize is False and cfg.coupling_rule == "paper" and cfg.record_timing is False
    assert cfg.spec == ModelSpec(p=0.9, lam=2.0, gamma=0.5)
    assert cfg.sweep == {"lam": [0.1, 1.0]}
    assert cfg.output == str(tmp_path / "res")


def test_load_config_errors(tmp_path):
    with pytest.raises(harness.ConfigError):
        harness.load_config(str(tmp_path / "missing.ini"))
    ini = tmp_path / "bad.ini"
    ini.write_text("[hyperparameters]\nbeta = 1\n")
    with pytest.raises(harness.ConfigError):
        harness.load_config(str(ini))


def test_sparse_input(tmp_path):
    path = tmp_path / "s.txt"
    rng = np.random.default_rng(0)
    lines = []
    for dom in ("books", "dvd"):
        for i in range(24):
            label = i % 2
            feats = {j: round(float(rng.random() + 2 * label * (j < 3)), 3) for j in rng.choice(8, 5, replace=False)}
            lines.append(f"{label} {dom} " + " ".join(f"{j}:{v}" for j, v in sorted(feats.items())))
    path.write_text("\n".join(lines) + "\n")
    cfg = _cfg(str(path), tmp_path, data_format="sparse", scenario="SS", seeds=[0])
    assert harness.validate(cfg).ok
    res = harness.run(cfg)
    assert res.ok and len(res.records) == 2 * 3 * 2


def test_sweep(three_domains, tmp_path):
    cfg = _cfg(three_domains, tmp_path, models=["S1M"], classifiers=["ridge"], seeds=[0])
    results = harness.sweep(cfg, {"gamma": [0.1, 1.0], "p": [0.3, 0.5]})
    assert len(results) == 4
    out = harness.emit_sweep(results, cfg.output)
    assert len(open(out).read().splitlines()) == 5


# CLI -----------------------------------------------------------------------

def test_cli_synth_and_run(tmp_path, capsys):
    path = str(tmp_path / "syn.csv")
    assert cli.main(["synth", "--output", path, "--n-domains", "3", "--dim", "5", "--per-class", "8"]) == 0
    assert data.load_dense(path).domains() == ["synth0", "synth1", "synth2"]
    out = str(tmp_path / "r")
    args = ["run", "--data", path, "--model", "BL,S1", "--classifier", "ridge,dscm", "--seeds", "0,1",
            "--scenario", "ss", "--noise", "0.3", "--no-timing", "--output", out]
    assert cli.main(args) == 0
    body = open(os.path.join(out, "records.csv")).read()
    assert len(body.splitlines()) == 1 + 6 * 2 * 2 * 2
    meta = json.load(open(os.path.join(out, "aggregate.json")))["metadata"]
    assert meta["standardized"] is True and meta["config"]["spec"]["p"] == 0.3
    assert cli.main(args) == 0
    assert open(os.path.join(out, "records.csv")).read() == body


def test_cli_exit_codes(tmp_path, three_domains):
    out = str(tmp_path / "e")
    assert cli.main(["validate", "--data", three_domains]) == 0
    assert cli.main(["validate", "--data", str(tmp_path / "nope.csv")]) == 2
    assert cli.main(["run", "--data", three_domains, "--model", "S7", "--output", out]) == 2
    assert cli.main(["run", "--data", three_domains, "--model", "S1C", "--scenario", "us", "--output", out]) == 2
    # a negative weight is rejected before any fitting
    assert cli.main(["run", "--data", three_domains, "--model", "S1", "--noise", "0.5", "--lambda", "-1",
                     "--output", out]) == 2


def test_cli_cell_failure_exit_one(tmp_path, three_domains, monkeypatch):
    from margda.errors import SingularMatrix

    real_fit = harness.fit_model

    def flaky(spec, split):
        if spec.model == "S1":
            raise SingularMatrix("forced")
        return real_fit(spec, split)

    monkeypatch.setattr(harness, "fit_model", flaky)
    out = str(tmp_path / "f")
    assert cli.main(["run", "--data", three_domains, "--model", "BL,S1", "--output", out, "--no-timing"]) == 1
    doc = json.load(open(os.path.join(out, "aggregate.json")))
    assert len(doc["failures"]) == 6 and "BL/ridge" in doc["aggregate"]


def test_cli_sweep(tmp_path, three_domains):
    out = str(tmp_path / "s")
    code = cli.main(["sweep", "--data", three_domains, "--model", "S1", "--seeds", "0",
                     "--noise-grid", "0.2,0.6", "--output", out])
    assert code == 0
    assert os.path.exists(os.path.join(out, "sweep.csv"))
    assert cli.main(["sweep", "--data", three_domains, "--output", out]) == 2
