import csv
import json
import math

import pytest

from sharpen.errors import ConfigError, InputError
from sharpen.harness.analyze import CSV_COLUMNS, CompletionRecord, bon_analyze, read_completions, write_csv
from sharpen.harness.cli import main
from sharpen.harness.config import load_config, parse_config, thread_count
from sharpen.harness.experiment import replay, run_experiment
from sharpen.harness.verify import SUITES, synthetic_completions, verify
from sharpen.errors import DomainError
from sharpen.rng import RngStream


def cfg_dict(tmp_path, **over):
    d = {"algorithm": "sft", "instance": {"kind": "random_tabular", "n_prompts": 2, "n_responses": 4, "seed": 1},
         "hyper": {"n": 60, "N": 4}, "seeds": [0, 1], "output_dir": str(tmp_path / "out")}
    d.update(over)
    return d


# -- config -----------------------------------------------------------------

def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(cfg_dict(tmp_path, colour="red"))
    d = cfg_dict(tmp_path)
    d["hyper"]["nn"] = 1
    with pytest.raises(ConfigError):
        parse_config(d)


@pytest.mark.parametrize("bad", [
    {"algorithm": "ppo"},
    {"hyper": {"n": 0}},
    {"hyper": {"beta": -1}},
    {"hyper": {"n": "ten"}},
    {"seeds": []},
    {"instance": {"kind": "galaxy"}},
])
def test_config_validation(tmp_path, bad):
    with pytest.raises(ConfigError):
        parse_config(cfg_dict(tmp_path, **bad))


def test_config_needs_exactly_one_instance(tmp_path):
    with pytest.raises(ConfigError):
        parse_config(cfg_dict(tmp_path, instance_file="x.json"))


def test_config_env_overrides(tmp_path, monkeypatch):
    monkeypatch.setenv("SHARPEN_OUTPUT_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("SHARPEN_THREADS", "3")
    assert parse_config(cfg_dict(tmp_path)).output_dir == str(tmp_path / "env")
    assert thread_count() == 3
    monkeypatch.setenv("SHARPEN_THREADS", "many")
    with pytest.raises(ConfigError):
        thread_count()


def test_load_config(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg_dict(tmp_path)))
    assert load_config(p).hyper.N == 4
    p.write_text("{")
    with pytest.raises(ConfigError):
        load_config(p)


# -- analyzer ---------------------------------------------------------------

def test_analyzer_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    with pytest.raises(InputError):
        read_completions(p)
    p.write_text('{"prompt_id": "a"}\n')
    with pytest.raises(InputError):
        read_completions(p)


def _records(seed=0, n_prompts=400):
    recs, exact = synthetic_completions(RngStream(seed), n_prompts=n_prompts)
    return recs, exact


def test_analyzer_n1_is_plain_accuracy():
    recs, _ = _records()
    rows = bon_analyze(recs, [1], ["log_likelihood"], RngStream(1), n_boot=100)
    r = rows[0]
    assert r["N"] == 1 and r["accuracy"] == r["coverage"]
    assert r["lift_abs"] == 0.0


def test_analyzer_skyline_and_monotone():
    recs, exact = _records(n_prompts=1500)
    rows = bon_analyze(recs, [1, 5, 20, 50], ["log_likelihood", "length_normalized"], RngStream(2), n_boot=100)
    for r in rows:
        assert r["coverage"] >= r["accuracy"]
        assert r["accuracy_lo"] <= r["accuracy"] <= r["accuracy_hi"]
    ll = [r["accuracy"] for r in rows if r["reward"] == "log_likelihood"]
    assert all(b >= a - 0.03 for a, b in zip(ll, ll[1:]))
    assert abs(ll[-1] - exact) < 0.05


def test_analyzer_majority_without_answers_is_not_fatal():
    recs = [CompletionRecord("p", f"r{i}", -float(i), 1, None, i == 0) for i in range(4)]
    rows = bon_analyze(recs, [2], ["majority"], RngStream(0), n_boot=10)
    assert all(r["n_failed"] == 1 for r in rows if r["reward"] == "majority")


def test_analyzer_baseline_lift():
    recs = [CompletionRecord("p", f"r{i}", -float(i), 1, None, i == 0) for i in range(4)]
    base = [CompletionRecord("p", "g", -1.0, 1, None, False)]
    rows = bon_analyze(recs, [4], ["log_likelihood"], RngStream(0), n_boot=10, baseline=base)
    assert rows[0]["accuracy"] == 1.0 and rows[0]["lift_abs"] == 100.0
    assert math.isnan(rows[0]["lift_rel_pct"])


def test_analyzer_too_few_completions():
    recs = [CompletionRecord("p", "r", -1.0)]
    with pytest.raises(InputError):
        bon_analyze(recs, [2], ["log_likelihood"], RngStream(0))


def test_csv_columns_frozen(tmp_path):
    recs, _ = _records(n_prompts=20)
    rows = bon_analyze(recs, [2], ["log_likelihood"], RngStream(0), n_boot=10)
    write_csv(rows, tmp_path / "a.csv")
    with open(tmp_path / "a.csv") as fh:
        header = next(csv.reader(fh))
    assert tuple(header) == CSV_COLUMNS
    assert CSV_COLUMNS[:5] == ("N", "reward", "n_prompts", "n_failed", "accuracy")


# -- experiments ------------------------------------------------------------

def test_sft_deterministic_base(tmp_path):
    from sharpen.instances import SharpeningInstance, ground_truth
    from sharpen.models import PromptDistribution
    from sharpen.serialization import save_instance
    from sharpen.sft import FiniteClass
    from conftest import tab
    base = tab([0.0, 1.0, 0.0], [1.0, 0.0, 0.0])
    mu = PromptDistribution.uniform(base.prompts)
    inst = SharpeningInstance("deterministic", mu, base, FiniteClass([base, tab([1 / 3] * 3, [1 / 3] * 3)]))
    inst.truth = ground_truth(base, mu)
    p = tmp_path / "det.json"
    save_instance(inst, p)
    d = cfg_dict(tmp_path, instance_file=str(p), seeds=[0, 1, 2])
    d.pop("instance")
    report, code = run_experiment(parse_config(d))
    assert code == 0
    assert all(s["verdict"]["epsilon_hat"] == 0.0 for s in report["seeds"])


def test_reports_byte_identical(tmp_path):
    a = parse_config(cfg_dict(tmp_path, output_dir=str(tmp_path / "a")))
    b = parse_config(cfg_dict(tmp_path, output_dir=str(tmp_path / "b")))
    run_experiment(a)
    run_experiment(b)
    ja = json.loads((tmp_path / "a" / "report.json").read_text())
    jb = json.loads((tmp_path / "b" / "report.json").read_text())
    ja["config"].pop("output_dir"), jb["config"].pop("output_dir")
    assert ja == jb
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    assert (tmp_path / "a" / "queries_seed0.jsonl").read_bytes() == (tmp_path / "b" / "queries_seed0.jsonl").read_bytes()


@pytest.mark.parametrize("alg,hyper", [
    ("sft", {"n": 60, "N": 4}),
    ("ada-sft", {"n": 60, "mu_stop": 2.0}),
    ("dpo", {"n": 60, "beta": 0.3}),
    ("xpo", {"T": 10, "beta": 0.3, "alpha": 0.01}),
    ("inference-bon", {"n": 30, "N_star": 2.0}),
])
def test_replay_matches_run(tmp_path, alg, hyper):
    cfg = parse_config(cfg_dict(tmp_path, algorithm=alg, hyper=hyper, seeds=[3]))
    report, code = run_experiment(cfg)
    assert code == 0
    seed = report["seeds"][0]
    rep = replay(cfg, tmp_path / "out" / "queries_seed3.jsonl")
    assert rep["verdict"] == seed["verdict"]
    assert rep["j_beta_final"] == seed["j_beta_final"]


def test_xpo_trace_final_not_below_initial(tmp_path):
    cfg = parse_config(cfg_dict(tmp_path, algorithm="xpo", hyper={"T": 20, "beta": 0.05},
                                instance={"kind": "softmax_separation", "d": 4, "y_size": 8, "seed": 2},
                                seeds=[0]))
    report, _ = run_experiment(cfg)
    s = report["seeds"][0]
    assert len(s["trace"]) == 21
    assert s["j_beta_final"] >= s["trace"][0] - 1e-12


def test_partial_failure_exit_code(tmp_path, monkeypatch):
    from sharpen.harness import experiment as ex
    real = ex.run_seed

    def flaky(cfg, seed):
        if seed == 1:
            raise DomainError("boom")
        return real(cfg, seed)

    monkeypatch.setattr(ex, "run_seed", flaky)
    report, code = run_experiment(parse_config(cfg_dict(tmp_path)))
    assert code == 2
    assert report["seeds"][1]["status"] == "failed" and "boom" in report["seeds"][1]["error"]
    report, code = run_experiment(parse_config(cfg_dict(tmp_path, seeds=[1])))
    assert code == 1


# -- CLI --------------------------------------------------------------------

def test_cli_end_to_end(tmp_path, capsys):
    inst = tmp_path / "inst.json"
    assert main(["gen-instance", "--kind", "random_tabular", "--param", "n_prompts=2", "--param",
                 "n_responses=3", "--seed", "4", "--out", str(inst)]) == 0
    out = tmp_path / "run"
    assert main(["run", "--algorithm", "sft", "--instance-file", str(inst), "--n", "50", "--N", "3",
                 "--seed", "0", "--output-dir", str(out)]) == 0
    assert (out / "report.json").exists() and (out / "queries_seed0.jsonl").exists()
    capsys.readouterr()
    assert main(["replay", "--algorithm", "sft", "--instance-file", str(inst), "--n", "50", "--N", "3",
                 "--log", str(out / "queries_seed0.jsonl")]) == 0
    rep = json.loads(capsys.readouterr().out)
    seed = json.loads((out / "report.json").read_text())["seeds"][0]
    assert rep["verdict"] == seed["verdict"]


def test_cli_config_file_with_overrides(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg_dict(tmp_path)))
    assert main(["run", "--config", str(p), "--N", "2", "--seeds", "5", "--output-dir", str(tmp_path / "o")]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["config"]["hyper"]["N"] == 2 and [s["seed"] for s in rep["seeds"]] == [5]


def test_cli_errors_exit_one(tmp_path, capsys):
    assert main(["run", "--algorithm", "sft", "--instance-file", str(tmp_path / "none.json")]) == 1
    assert "error:" in capsys.readouterr().err
    p = tmp_path / "c.json"
    p.write_text(json.dumps(cfg_dict(tmp_path, bogus=1)))
    assert main(["run", "--config", str(p)]) == 1


def test_cli_bon_analyze(tmp_path):
    from sharpen.harness.analyze import write_completions
    recs, _ = _records(n_prompts=30)
    src = tmp_path / "c.jsonl"
    write_completions(recs, src)
    out = tmp_path / "a.csv"
    assert main(["bon-analyze", str(src), "--N", "1", "4", "--rewards", "log_likelihood", "--n-boot", "20",
                 "--out", str(out)]) == 0
    rows = list(csv.DictReader(open(out)))
    assert [r["N"] for r in rows] == ["1", "4"]
    empty = tmp_path / "e.jsonl"
    empty.write_text("")
    assert main(["bon-analyze", str(empty)]) == 1


def test_cli_verify(tmp_path, capsys):
    assert main(["verify", "greedy-prop", "--json", str(tmp_path / "v.json")]) == 0
    assert capsys.readouterr().out.startswith("PASS greedy-prop")
    assert json.loads((tmp_path / "v.json").read_text())[0]["passed"] is True


def test_verify_unknown_suite():
    with pytest.raises(DomainError):
        verify("nope")
    assert len(SUITES) == 12
