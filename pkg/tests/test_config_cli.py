import csv
import json
from pathlib import Path

import numpy as np
import pytest

from spectral_hmm.cli import main
from spectral_hmm.config import build_sampler_config, config_to_dict, load_config, parse_config_text
from spectral_hmm.errors import ConfigError

REPO = Path(__file__).resolve().parents[1]
TINY = "iterations = 30\nburnin = 20\nK_max = 3\nd_max = 2\nseed = 4\n"


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_parse_defaults_and_auto():
    v = parse_config_text(TINY + "sigma2_omega = auto\nbirth_rank_guard = no\n# c = 9\n")
    assert v["iterations"] == 30 and v["sigma2_omega"] is None and v["birth_rank_guard"] is False
    assert v["c"] == 0.4 and v["thin"] == 1
    cfg = build_sampler_config(v, seed=9)
    assert cfg.seed == 9 and cfg.K_max == 3 and not cfg.proposal.birth_rank_guard


def test_parse_reports_every_problem():
    with pytest.raises(ConfigError) as err:
        parse_config_text("iterations = ten\nbogus = 1\nburnin = 1\nburnin = 2\nnonsense\n")
    msg = str(err.value)
    for part in ("line 1", "expected an integer", "unknown key 'bogus'", "duplicate key",
                 "line 5", "missing required key 'K_max'", "missing required key 'd_max'"):
        assert part in msg
    assert "missing required key 'iterations'" not in msg


def test_integer_accepts_float_notation():
    assert parse_config_text(TINY.replace("30", "3e1"))["iterations"] == 30


def test_value_errors_become_config_errors():
    with pytest.raises(ConfigError, match="phi_omega"):
        build_sampler_config(parse_config_text(TINY + "phi_omega = 0.7\n"))
    with pytest.raises(ConfigError, match="burnin"):
        build_sampler_config(parse_config_text(TINY.replace("burnin = 20", "burnin = 30")))


def test_shipped_configs_parse():
    for name in ("illustrative.cfg", "airflow.cfg"):
        cfg = build_sampler_config(load_config(REPO / "configs" / name))
        assert config_to_dict(cfg)["K_max"] == cfg.K_max
    ill = build_sampler_config(load_config(REPO / "configs" / "illustrative.cfg"))
    assert (ill.iterations, ill.burnin, ill.K_max, ill.d_max) == (15000, 3000, 7, 5)
    assert ill.emission.phi_omega == 0.25 and ill.proposal.rj_updates_per_sweep == 2


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "nope.cfg")


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.cfg").write_text(TINY)
    assert main(["simulate", "illustrative", "--out", str(d / "sim"), "--seed", "3",
                 "--sample-rate", "4"]) == 0
    assert main(["fit", str(d / "sim" / "series.csv"), "--config", str(d / "tiny.cfg"),
                 "--out", str(d / "fit")]) == 0
    return d


def test_simulate_outputs(workdir):
    rows = read_csv(workdir / "sim" / "series.csv")
    assert len(rows) == 1450 and set(rows[0]) == {"t", "value", "state"}
    assert float(rows[1]["t"]) == 0.25
    truth = read_csv(workdir / "sim" / "truth.csv")
    assert set(truth[0]) == {"t", "state", "signal"}
    assert {r["state"] for r in truth} <= {"1", "2", "3"}


def test_simulate_scenarios(tmp_path):
    assert main(["simulate", "ar-hmm", "--out", str(tmp_path / "ar")]) == 0
    assert "peak" in read_csv(tmp_path / "ar" / "truth.csv")[0]
    assert main(["simulate", "t-innovations", "--out", str(tmp_path / "t")]) == 0
    assert len(read_csv(tmp_path / "t" / "series.csv")) == 1024


def test_simulate_custom(tmp_path):
    spec = {"T": 50, "transition": [[0.9, 0.1], [0.1, 0.9]],
            "states": [{"omegas": [0.1], "betas": [1, 0], "sigma2": 0.1},
                       {"omegas": [0.2], "betas": [0, 1], "sigma2": 0.1}]}
    (tmp_path / "g.json").write_text(json.dumps(spec))
    assert main(["simulate", "custom", "--generator", str(tmp_path / "g.json"),
                 "--out", str(tmp_path / "c")]) == 0
    assert len(read_csv(tmp_path / "c" / "series.csv")) == 50
    assert main(["simulate", "custom", "--out", str(tmp_path / "c")]) == 2
    spec["transition"] = [[0.5, 0.4], [0.1, 0.9]]
    (tmp_path / "g.json").write_text(json.dumps(spec))
    assert main(["simulate", "custom", "--generator", str(tmp_path / "g.json")]) == 2


def test_fit_outputs(workdir, capsys):
    m = json.loads((workdir / "fit" / "manifest.json").read_text())
    assert m["finished"] is not None and m["seed"] == 4 and m["sample_rate"] == 4.0
    assert m["traces"] == ["trace.jsonl"]
    from spectral_hmm.sampler import load_trace
    tr = load_trace(workdir / "fit" / "trace.jsonl")
    assert len(tr) == 10 and tr.sample_rate == 4.0


def test_fit_multiple_chains(workdir):
    out = workdir / "multi"
    assert main(["fit", str(workdir / "sim" / "series.csv"), "--config", str(workdir / "tiny.cfg"),
                 "--out", str(out), "--chains", "2", "--seed", "8"]) == 0
    m = json.loads((out / "manifest.json").read_text())
    assert len(set(m["chain_seeds"])) == 2
    a = (out / "trace.0.jsonl").read_text().splitlines()[1]
    b = (out / "trace.1.jsonl").read_text().splitlines()[1]
    assert a != b


def test_summarize(workdir):
    out = workdir / "summary"
    assert main(["summarize", str(workdir / "fit" / "trace.jsonl"), "--out", str(out)]) == 0
    s = json.loads((out / "summary.json").read_text())
    assert s["relabelled"] and s["n_records"] == 10
    sig = read_csv(out / "signal.csv")
    assert len(sig) == 1450 and float(sig[4]["t"]) == 1.0
    assert all(float(r["lo"]) <= float(r["mean"]) <= float(r["hi"]) for r in sig)
    assert len(read_csv(out / "peaks.csv")) == 1450
    assert main(["summarize", str(workdir / "fit" / "trace.jsonl"), "--out", str(out),
                 "--level", "2"]) == 2


def test_events(workdir):
    out = workdir / "events.csv"
    args = ["events", str(workdir / "fit" / "trace.jsonl"), str(workdir / "sim" / "series.csv"),
            "--states", "1,2", "--out", str(out)]
    assert main(args) == 0
    rows = read_csv(out)
    assert all(float(r["duration_s"]) >= 10.0 for r in rows)
    if rows:
        assert set(rows[0]) == {"state", "start", "end", "duration_s"}
    bad = args.copy()
    bad[bad.index("1,2")] = "9"
    assert main(bad) == 2


def test_exit_codes(workdir, tmp_path):
    series = str(workdir / "sim" / "series.csv")
    cfg = str(workdir / "tiny.cfg")
    (tmp_path / "bad.cfg").write_text("iterations = x\n")
    assert main(["fit", series, "--config", str(tmp_path / "bad.cfg")]) == 2
    (tmp_path / "bad.csv").write_text("t,value\n0,1\n1,oops\n")
    assert main(["fit", str(tmp_path / "bad.csv"), "--config", cfg, "--out", str(tmp_path)]) == 3
    assert main(["summarize", str(tmp_path / "missing.jsonl")]) == 3
    (tmp_path / "cut.jsonl").write_text('{"format": "spectral-hmm-trace", "version": 1}')
    assert main(["summarize", str(tmp_path / "cut.jsonl")]) == 3
    (tmp_path / "blocker").write_text("")
    assert main(["simulate", "illustrative", "--out", str(tmp_path / "blocker" / "x")]) == 3
