"""Per-seed experiment pipelines, report assembly and replay from query logs."""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .. import instances as inst_mod
from ..decode import SelfReward, bon_select
from ..errors import SharpenError
from ..metrics import concentrability, coverage_profile, j_beta, sharpness_check, tilt
from ..oracle import OracleSession, groups, read_log
from ..rlhf import PreferenceDataset, XpoConfig, collect_preference_dataset, dpo_fit, xpo_replay, xpo_run
from ..rng import RngStream
from ..serialization import load_instance
from ..sft import (BonDataset, FiniteClass, LinearSoftmaxClass, ProductClass, StoppingConfig, TabularClass,
                   adaptive_collect, bon_class, bon_model, collect_bon_dataset, mle_fit)
from .config import ExperimentConfig, thread_count

REPORT_CSV_COLUMNS = ("seed", "status", "epsilon_hat", "passes", "n", "N_max", "m", "c_cov", "j_beta_final")


def version_hash() -> str:
    """SHA-256 over the package sources, so reports pin the code that produced them."""
    root = Path(__file__).resolve().parent.parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.suffix in (".py", ".pyx") and "__pycache__" not in p.parts:
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()[:16]


def build_instance(cfg: ExperimentConfig):
    if cfg.instance_file is not None:
        return load_instance(cfg.instance_file)
    spec = dict(cfg.instance)
    kind = spec.pop("kind")
    rng = RngStream(int(spec.pop("seed", 0)))
    if kind == "random_tabular":
        return inst_mod.random_tabular_instance(spec.pop("n_prompts"), spec.pop("n_responses"), rng, **spec)
    if kind == "lower_bound_family":
        return inst_mod.lower_bound_family(rng=rng, **spec)
    if kind == "softmax_separation":
        return inst_mod.softmax_separation(rng=rng, **spec)
    if kind == "maxcut_hardness":
        return inst_mod.maxcut_hardness(spec["n_vertices"], spec["edges"])[0]
    return inst_mod.representational_example(**spec)


def tilt_class(hyp, beta: float):
    """Image of a hypothesis class under the KL-regularized tilt (realizable for the preference loss)."""
    if isinstance(hyp, ProductClass):
        def f(i, r):
            with np.errstate(divide="ignore"):
                lr = (1 + 1 / beta) * np.log(r)
            lr -= lr.max()
            p = np.exp(lr)
            return p / p.sum()
        return hyp.map_rows(f)
    if isinstance(hyp, FiniteClass):
        return FiniteClass([tilt(m, beta) for m in hyp.models])
    return hyp


def _policy_N(cfg: ExperimentConfig) -> int:
    h = cfg.hyper
    if h.N_star is not None:
        # N = ceil(N_star * ln(2/delta)), the oracle-complexity scaling of the sample count
        return max(1, math.ceil(h.N_star * math.log(2 / h.delta) - 1e-12))
    return h.N


def run_seed(cfg: ExperimentConfig, seed: int) -> dict:
    h = cfg.hyper
    inst = build_instance(cfg)
    base, mu = inst.base, inst.mu
    rng = RngStream(seed)
    reward = SelfReward(h.reward)
    trace = []
    alg = cfg.algorithm
    if alg == "sft":
        N = _policy_N(cfg)
        sess = OracleSession(base, mu, "fixed", N=N, n_max=h.n)
        data = collect_bon_dataset(sess, h.n, N, reward, rng)
        model = mle_fit(bon_class(inst.model_class, N), data)
    elif alg == "ada-sft":
        sess = OracleSession(base, mu, "adaptive", n_max=h.n)
        data = adaptive_collect(sess, h.n, StoppingConfig(h.mu_stop), rng)
        model = mle_fit(TabularClass(base.prompts, base.responses), data)
    elif alg == "dpo":
        sess = OracleSession(base, mu, "fixed", N=2, n_max=h.n)
        data = collect_preference_dataset(sess, h.n, rng)
        model = dpo_fit(tilt_class(inst.model_class, h.beta), base, data, h.beta)
    elif alg == "xpo":
        sess = OracleSession(base, mu, "adaptive", relaxed=True)
        xcfg = XpoConfig(T=h.T, beta=h.beta, alpha=h.alpha)
        init = getattr(base, "theta", None) if isinstance(inst.model_class, LinearSoftmaxClass) else None
        model, xlog = xpo_run(inst.model_class, base, mu, xcfg, sess, rng, init=init)
        trace = [r["j_beta"] for r in xlog.rows]
    else:  # inference-bon
        N = _policy_N(cfg)
        sess = OracleSession(base, mu, "fixed", N=N, n_max=h.n)
        hits = 0
        argmax = inst.truth["argmax"]
        for _ in range(h.n):
            x = sess.draw_prompt(rng)
            idx, lps = sess.draw_many(x, N, rng)
            k = bon_select([(None, float(v)) for v in lps], reward)
            hits += int(idx[k]) in argmax[base.prompts.index(x)]
        trace = [hits / h.n]
        model = bon_model(base, N)
    sess.seal()
    verdict = sharpness_check(model, base, mu, h.delta, h.gamma)
    prof = coverage_profile(base, mu, gamma=h.gamma)
    jb = j_beta(model, base, mu, h.beta)
    return {
        "seed": seed, "status": "ok", "verdict": verdict.to_dict(), "passes": verdict.passes(h.epsilon),
        "coverage": prof.to_dict(), "c_conc": concentrability(model, base, mu), "budget": sess.budget_report(),
        "j_beta_final": jb, "trace": trace, "_log": sess,
    }


def _safe_seed(args):
    cfg, seed = args
    try:
        res = run_seed(cfg, seed)
    except SharpenError as e:
        return {"seed": seed, "status": "failed", "error": f"{type(e).__name__}: {e}"}, None
    sess = res.pop("_log")
    return res, sess


def _clean(v):
    if isinstance(v, float) and (math.isinf(v) or math.isnan(v)):
        return str(v)
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, list):
        return [_clean(x) for x in v]
    return v


def run_experiment(cfg: ExperimentConfig) -> tuple[dict, int]:
    """Run all seeds, persist query logs and the report; return (report, exit code)."""
    build_instance(cfg)  # a bad instance spec is a config error, not a per-seed failure
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, s) for s in cfg.seeds]
    if thread_count() > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(thread_count()) as ex:
            results = list(ex.map(_safe_seed, jobs))
    else:
        results = [_safe_seed(j) for j in jobs]
    per_seed = []
    for res, sess in results:
        if sess is not None:
            log_path = out / f"queries_seed{res['seed']}.jsonl"
            sess.export_log(log_path)
            res["query_log"] = log_path.name
        per_seed.append(res)
    ok = [r for r in per_seed if r["status"] == "ok"]
    report = {
        "version": version_hash(),
        "config": cfg.to_dict(),
        "seeds": per_seed,
        "n_completed": len(ok),
        "success_rate": (sum(r["passes"] for r in ok) / len(ok)) if ok else 0.0,
    }
    report = _clean(report)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_CSV_COLUMNS)
        w.writeheader()
        for r in per_seed:
            row = {"seed": r["seed"], "status": r["status"]}
            if r["status"] == "ok":
                b = r["budget"]
                row.update(epsilon_hat=r["verdict"]["epsilon_hat"], passes=r["passes"], n=b["n"],
                           N_max=b["N_max"], m=b["m"], c_cov=r["coverage"]["c_cov"],
                           j_beta_final=r["j_beta_final"])
            w.writerow(row)
    code = 0 if len(ok) == len(per_seed) else (1 if not ok else 2)
    return report, code


# ---------------------------------------------------------------------------
# replay


def replay(cfg: ExperimentConfig, log_path) -> dict:
    """Refit the model from a persisted query log and recompute the verdict.

    No base-model sampling happens here: selections use only the logged
    responses and log-probabilities.
    """
    h = cfg.hyper
    inst = build_instance(cfg)
    base, mu = inst.base, inst.mu
    log = read_log(log_path)
    reward = SelfReward(h.reward)
    alg = cfg.algorithm
    if alg in ("sft", "ada-sft"):
        data = BonDataset()
        for g in groups(log):
            k = bon_select([(q.response, q.logprob) for q in g], reward)
            data.records.append((g[k].prompt, g[k].response))
            data.group_sizes.append(len(g))
        cls = bon_class(inst.model_class, _policy_N(cfg)) if alg == "sft" else TabularClass(base.prompts,
                                                                                           base.responses)
        model = mle_fit(cls, data)
    elif alg == "dpo":
        data = PreferenceDataset()
        for g in groups(log):
            data.append(g[0].prompt, g[0].response, g[1].response, g[0].logprob, g[1].logprob)
        model = dpo_fit(tilt_class(inst.model_class, h.beta), base, data, h.beta)
    elif alg == "xpo":
        ev = {q.group: q for q in log if q.kind == "evaluate"}
        triples = [(g[0].prompt, ev[g[0].group].response, g[0].response) for g in groups(log)]
        init = getattr(base, "theta", None) if isinstance(inst.model_class, LinearSoftmaxClass) else None
        model, _ = xpo_replay(inst.model_class, base, mu, XpoConfig(T=h.T, beta=h.beta, alpha=h.alpha), triples,
                              RngStream(0), init=init)
    else:
        model = bon_model(base, _policy_N(cfg))
    verdict = sharpness_check(model, base, mu, h.delta, h.gamma)
    return _clean({"verdict": verdict.to_dict(), "passes": verdict.passes(h.epsilon),
                   "j_beta_final": j_beta(model, base, mu, h.beta)})

