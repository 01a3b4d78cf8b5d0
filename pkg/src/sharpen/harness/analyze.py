"""Model-agnostic best-of-N analysis of logged completions.

Input is JSONL, one completion per line::

    {"prompt_id": "q17", "response_id": "r3", "logprob": -12.5, "length": 40,
     "answer": "42", "correct": true}

``answer`` and ``correct`` are optional. Output rows follow ``CSV_COLUMNS``;
the column list is append-only.
"""
from __future__ import annotations

import csv
import json
import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..decode import Candidate, SelfReward, bon_select
from ..errors import InputError, SelectionError
from ..rng import RngStream

CSV_COLUMNS = ("N", "reward", "n_prompts", "n_failed", "accuracy", "accuracy_lo", "accuracy_hi",
               "mean_logprob", "coverage", "coverage_lo", "coverage_hi", "lift_abs", "lift_rel_pct")


@dataclass(frozen=True)
class CompletionRecord:
    prompt_id: str
    response_id: str
    logprob: float
    length: int = 1
    answer: str | None = None
    correct: bool | None = None

    def candidate(self) -> Candidate:
        return Candidate(self.response_id, self.logprob, self.length, self.answer, self.correct)


def parse_record(obj: dict, lineno: int = 0) -> CompletionRecord:
    try:
        rec = CompletionRecord(str(obj["prompt_id"]), str(obj["response_id"]), float(obj["logprob"]),
                               int(obj.get("length", 1)), obj.get("answer"), obj.get("correct"))
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"line {lineno}: malformed completion record ({e})") from None
    if rec.length < 1:
        raise InputError(f"line {lineno}: length must be >= 1")
    if rec.correct is not None and not isinstance(rec.correct, bool):
        raise InputError(f"line {lineno}: correct must be a boolean")
    if rec.answer is not None:
        rec = CompletionRecord(rec.prompt_id, rec.response_id, rec.logprob, rec.length, str(rec.answer),
                               rec.correct)
    return rec


def read_completions(path) -> list[CompletionRecord]:
    out = []
    try:
        with open(path) as fh:
            for k, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as e:
                    raise InputError(f"line {k}: invalid JSON ({e})") from None
                out.append(parse_record(obj, k))
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from None
    if not out:
        raise InputError(f"{path} contains no completion records")
    return out


def write_completions(records, path) -> None:
    with open(path, "w") as fh:
        for r in records:
            d = {"prompt_id": r.prompt_id, "response_id": r.response_id, "logprob": r.logprob, "length": r.length}
            if r.answer is not None:
                d["answer"] = r.answer
            if r.correct is not None:
                d["correct"] = r.correct
            fh.write(json.dumps(d) + "\n")


def by_prompt(records) -> "OrderedDict[str, list[CompletionRecord]]":
    pools: OrderedDict = OrderedDict()
    for r in records:
        pools.setdefault(r.prompt_id, []).append(r)
    return pools


def _bootstrap(values: np.ndarray, rng: RngStream, n_boot: int) -> tuple[float, float]:
    if values.size == 0:
        return math.nan, math.nan
    idx = rng.integers(0, values.size, size=(n_boot, values.size))
    means = values[idx].mean(axis=1)
    lo, hi = np.percentile(means, [2.5, 97.5])
    return float(lo), float(hi)


def bon_analyze(records, Ns, rewards, rng: RngStream, n_boot: int = 1000, baseline=None) -> list[dict]:
    """Per-(N, reward) accuracy, mean selected logprob and coverage skyline.

    For each prompt and N a seeded subsample of N completions (without
    replacement) is shared by all rewards. Lift is measured against the
    ``baseline`` records (e.g. greedy outputs, one per prompt) when given,
    otherwise against N=1 accuracy under the same reward.
    """
    pools = by_prompt(records)
    if not pools:
        raise InputError("no completion records")
    Ns = sorted({int(n) for n in Ns} | ({1} if baseline is None else set()))
    rewards = [r if isinstance(r, SelfReward) else SelfReward(r) for r in rewards]
    labelled = all(r.correct is not None for r in records)
    for pid, pool in pools.items():
        if len(pool) < max(Ns):
            raise InputError(f"prompt {pid!r} has {len(pool)} completions, fewer than N={max(Ns)}")

    base_acc = None
    if baseline is not None:
        bpool = by_prompt(baseline)
        vals = [bool(bpool[p][0].correct) for p in pools if p in bpool]
        if not vals:
            raise InputError("baseline shares no prompts with the completions")
        base_acc = float(np.mean(vals))

    sub_rng, boot_rng = rng.child(0), rng.child(1)
    rows, n1 = [], {}
    for N in Ns:
        subs = {pid: [pool[i] for i in sorted(sub_rng.permutation(len(pool))[:N])] for pid, pool in pools.items()}
        cover = np.array([any(bool(c.correct) for c in s) for s in subs.values()], dtype=float) if labelled else None
        for rw in rewards:
            correct, lps, failed = [], [], 0
            for s in subs.values():
                try:
                    k = bon_select([c.candidate() for c in s], rw)
                except SelectionError:
                    failed += 1
                    continue
                lps.append(s[k].logprob)
                if labelled:
                    correct.append(float(bool(s[k].correct)))
            acc_v = np.array(correct)
            acc = float(acc_v.mean()) if acc_v.size else math.nan
            a_lo, a_hi = _bootstrap(acc_v, boot_rng, n_boot)
            c_lo, c_hi = _bootstrap(cover, boot_rng, n_boot) if labelled else (math.nan, math.nan)
            if N == 1:
                n1[rw.kind] = acc
            ref = base_acc if base_acc is not None else n1.get(rw.kind, math.nan)
            lift = 100.0 * (acc - ref) if labelled else math.nan
            rel = 100.0 * (acc - ref) / ref if labelled and ref and not math.isnan(ref) else math.nan
            rows.append({"N": N, "reward": rw.kind, "n_prompts": len(pools), "n_failed": failed,
                         "accuracy": acc if labelled else math.nan, "accuracy_lo": a_lo, "accuracy_hi": a_hi,
                         "mean_logprob": float(np.mean(lps)) if lps else math.nan,
                         "coverage": float(cover.mean()) if labelled else math.nan,
                         "coverage_lo": c_lo, "coverage_hi": c_hi, "lift_abs": lift, "lift_rel_pct": rel})
    return rows


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def write_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r[k]) for k in CSV_COLUMNS})
