"""Evaluation sweeps over SNR for precoding and scheduling methods.

Baselines and trained checkpoints run through one sweep harness that emits
:class:`EvalRecord` rows (CSV) and, on request, a rendered figure next to the
delimited output.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import complexity, mimo, training

PRECODING_METHODS = ("zf", "mmse", "wmmse-rand", "wmmse-mmseinit", "tecfp")
SCHEDULING_METHODS = ("random-sched", "greedy-sched", "teus")


@dataclass
class EvalRecord:
    snr_db: float
    method: str
    mean_rate: float
    samples: int
    multiplications: int
    parameters: int


CSV_HEADER = ("snr_db", "method", "mean_sum_rate", "samples", "multiplications", "parameters")


def write_csv(records, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow(
                [
                    f"{r.snr_db:g}",
                    r.method,
                    f"{r.mean_rate:.9g}",
                    r.samples,
                    r.multiplications,
                    r.parameters,
                ]
            )


def read_csv(path):
    records = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            records.append(
                EvalRecord(
                    snr_db=float(row["snr_db"]),
                    method=row["method"],
                    mean_rate=float(row["mean_sum_rate"]),
                    samples=int(row["samples"]),
                    multiplications=int(row["multiplications"]),
                    parameters=int(row["parameters"]),
                )
            )
    return records


def _batched_model_rates(model, h, noise, power, chunk=256):
    totals = []
    for start in range(0, len(h), chunk):
        part = h[start : start + chunk]
        w = ad.value_of(model.precode(part, noise, power))
        totals.append(ad.value_of(mimo.sum_rate(part, w, noise)[1]))
    return np.concatenate(totals)


def eval_precoding(h_test, snr_list, power, methods, checkpoint=None, wmmse_iters=300):
    """Mean sum-rate per (SNR, method) over a precoding test set."""
    h_test = np.asarray(h_test)
    n, k, nr, nt = h_test.shape
    model = None
    if "tecfp" in methods:
        if checkpoint is None:
            raise ValueError("method tecfp needs a checkpoint")
        model, mcfg, _ = training.load_checkpoint(checkpoint)
        if mcfg.task != "precode":
            raise ValueError(f"checkpoint holds a {mcfg.task!r} model, expected precoding")
    records = []
    for snr in snr_list:
        noise = power / 10.0 ** (snr / 10.0)
        for method in methods:
            params = 0
            if method == "tecfp":
                totals = _batched_model_rates(model, h_test, noise, power)
                mults = complexity.count_mults(
                    "tecfp", k, nr, nt,
                    depth=model.cfg.depth, hidden=model.cfg.hidden, pattern=model.cfg.pattern,
                )
                params = model.parameter_count
            elif method in ("zf", "mmse"):
                fn = mimo.zf_precoder if method == "zf" else mimo.mmse_precoder
                totals = np.array([fn(h_test[i], noise, power).total for i in range(n)])
                mults = complexity.count_mults(method, k, nr, nt)
            elif method in ("wmmse-rand", "wmmse-mmseinit"):
                init = "random" if method == "wmmse-rand" else "mmse"
                totals, iters = [], []
                for i in range(n):
                    sol, _, _ = mimo.wmmse(
                        h_test[i], noise, power, init=init, max_iter=wmmse_iters, seed=i
                    )
                    totals.append(sol.total)
                    iters.append(sol.iterations)
                totals = np.asarray(totals)
                mults = complexity.count_mults(
                    "wmmse", k, nr, nt, iterations=int(round(float(np.mean(iters))))
                )
            else:
                raise ValueError(f"unknown precoding method {method!r}")
            records.append(
                EvalRecord(float(snr), method, float(np.mean(totals)), n, int(mults), int(params))
            )
    return records


def eval_scheduling(
    h_cand_test, snr_list, power, k, methods, checkpoint=None, precoder="mmse", seed=0
):
    """Mean post-selection sum-rate per (SNR, method) over a candidate set."""
    from . import networks

    h_cand_test = np.asarray(h_cand_test)
    n, k_cand, nr, nt = h_cand_test.shape
    model = None
    if "teus" in methods:
        if checkpoint is None:
            raise ValueError("method teus needs a checkpoint")
        model, mcfg, _ = training.load_checkpoint(checkpoint)
        if mcfg.task != "schedule":
            raise ValueError(f"checkpoint holds a {mcfg.task!r} model, expected scheduling")
    records = []
    greedy_steps = sum(
        (k_cand - s) * complexity.linear_precoder_mults(s + 1, nr, nt) for s in range(k)
    )
    for snr in snr_list:
        noise = power / 10.0 ** (snr / 10.0)
        pre = training.label_precoder_callback(precoder, noise, power)
        pre_mults = complexity.count_mults(
            "wmmse" if precoder == "wmmse" else "mmse", k, nr, nt
        )
        for method in methods:
            params = 0
            if method == "teus":
                x = networks.build_input(h_cand_test, noise)
                scores = ad.value_of(model.forward(x))
                etas = [networks.softmax_topk(scores[i], k)[0] for i in range(n)]
                mults = (
                    complexity.count_mults(
                        "teus", k, nr, nt, k_cand=k_cand,
                        depth=model.cfg.depth, hidden=model.cfg.hidden, pattern=model.cfg.pattern,
                    )
                    + pre_mults
                )
                params = model.parameter_count
            elif method == "greedy-sched":
                etas = [
                    mimo.greedy_schedule(h_cand_test[i], noise, power, k, pre)
                    for i in range(n)
                ]
                mults = greedy_steps + pre_mults
            elif method == "random-sched":
                etas = [
                    mimo.random_schedule(k_cand, k, seed=mimo.splitmix64(seed, i))
                    for i in range(n)
                ]
                mults = pre_mults
            else:
                raise ValueError(f"unknown scheduling method {method!r}")
            totals = np.array(
                [
                    mimo.eval_schedule(h_cand_test[i], etas[i], noise, power, pre)
                    for i in range(n)
                ]
            )
            records.append(
                EvalRecord(float(snr), method, float(np.mean(totals)), n, int(mults), int(params))
            )
    return records
