"""How closely do expected relevance and peak relevance rank the same likelihoods?

For each noise level, RG3L log-likelihoods are drawn once from a synthetic
backend and ranked both ways. Reports mean Kendall tau between the two
orderings, split into pairs of documents with equal and with different
planted grades, along with both NDCG@10 values.

    python scripts/er_pr_agreement.py --queries 50 --sigma 0 0.25 0.5 1.0
"""

from __future__ import annotations

import argparse
from itertools import combinations

import numpy as np

from graded_rank.backend import SyntheticMock, SyntheticMockConfig
from graded_rank.config import MethodSpec
from graded_rank.evaluation import evaluate
from graded_rank.experiment import rank_records, score_method
from graded_rank.prompt import PromptRenderer
from graded_rank.synthetic import CALIBRATION_3L, kendall_tau, planted_collection

ER = MethodSpec("ER", "RG_TEXTUAL", {"preset": "RG3L"}, strategy="expected_relevance")
PR = MethodSpec("PR", "RG_TEXTUAL", {"preset": "RG3L"}, strategy="peak_relevance")


def split_agreement(order_a, order_b, grades) -> tuple[float, float]:
    """Mean concordance (+1 / -1) over same-grade pairs and over different-grade pairs."""
    pa = {d: i for i, d in enumerate(order_a)}
    pb = {d: i for i, d in enumerate(order_b)}
    same, diff = [], []
    for x, y in combinations(order_a, 2):
        concordant = 1.0 if (pa[x] - pa[y]) * (pb[x] - pb[y]) > 0 else -1.0
        (same if grades[x] == grades[y] else diff).append(concordant)
    return float(np.mean(same)) if same else float("nan"), float(np.mean(diff)) if diff else float("nan")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--queries", type=int, default=50)
    parser.add_argument("--seed", type=int, default=6)
    parser.add_argument("--sigma", type=float, nargs="+", default=[0.0, 0.25, 0.5, 1.0])
    args = parser.parse_args()

    col = planted_collection(args.seed, n_queries=args.queries)
    ds = col.dataset
    order = [q.id for q in ds.queries]
    print("sigma,tau,tau_same_grade,tau_cross_grade,ndcg_er,ndcg_pr")
    for sigma in args.sigma:
        mock = SyntheticMock(SyntheticMockConfig(ds.qrels, CALIBRATION_3L, sigma, args.seed))
        records, _ = score_method(ER, ds, col.candidates, mock, PromptRenderer(), 8)
        by_er, _, _ = rank_records(ER, records, order)
        by_pr, _, _ = rank_records(PR, records, order)
        taus, same, cross = [], [], []
        for q in order:
            taus.append(kendall_tau(by_er[q].doc_ids, by_pr[q].doc_ids))
            s, c = split_agreement(by_er[q].doc_ids, by_pr[q].doc_ids, ds.qrels.for_query(q))
            same.append(s)
            cross.append(c)
        ndcg_er = evaluate(by_er.values(), ds.qrels).mean
        ndcg_pr = evaluate(by_pr.values(), ds.qrels).mean
        print(f"{sigma:g},{np.mean(taus):.4f},{np.nanmean(same):.4f},{np.nanmean(cross):.4f},{ndcg_er:.4f},{ndcg_pr:.4f}")


if __name__ == "__main__":
    main()
