"""Does a finer label scheme help when the reader can separate middle grades?

Plants three relevance grades, lets a synthetic backend answer RG3L prompts
with a calibration that places grade-1 pairs between grades 0 and 2, and
answers RG2L prompts with a calibration that lumps grades 1 and 2 together.
Prints mean NDCG@10 for both schemes per seed and a one-sided sign test.

    python scripts/granularity_study.py --seeds 20 --sigma 1.0
"""

from __future__ import annotations

import argparse
import math

from graded_rank.synthetic import granularity_trial


def sign_test_p(wins: int, n: int) -> float:
    """One-sided P(X >= wins) for X ~ Binomial(n, 1/2)."""
    return math.fsum(math.comb(n, k) for k in range(wins, n + 1)) / 2**n


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--sigma", type=float, default=1.0, help="per-label Gaussian noise")
    parser.add_argument("--queries", type=int, default=20)
    args = parser.parse_args()

    print("seed,ndcg_3l,ndcg_2l")
    wins = 0
    diffs = []
    for seed in range(args.seeds):
        three, two = granularity_trial(seed, args.sigma, n_queries=args.queries)
        wins += three > two
        diffs.append(three - two)
        print(f"{seed},{three:.4f},{two:.4f}")
    print(f"# 3-label wins {wins}/{args.seeds}, mean gain {math.fsum(diffs) / len(diffs):+.4f}, "
          f"sign test p = {sign_test_p(wins, args.seeds):.2e}")


if __name__ == "__main__":
    main()
