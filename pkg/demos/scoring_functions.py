"""Score one triple with every link scorer and show two identities they satisfy.

TransMS gives the same score when head and tail swap; TransD with zero
projection vectors collapses to TransE.
"""

import numpy as np

from mistlink.kge import (CORE_SHAPE, score_knn, score_transd, score_transe, score_transms,
                          score_tucker)


def main():
    rng = np.random.default_rng(0)
    d = CORE_SHAPE[0]
    te_i, me_j, te_k = (rng.normal(size=d) for _ in range(3))
    alpha = 0.7
    core = rng.normal(size=CORE_SHAPE)
    zero = np.zeros(d)

    print(f"TransE  {score_transe(te_i, me_j, te_k): .6f}")
    print(f"TransD  {score_transd(te_i, rng.normal(size=d), me_j, rng.normal(size=d), te_k, rng.normal(size=d)): .6f}")
    print(f"TransMS {score_transms(te_i, me_j, alpha, te_k): .6f}")
    print(f"TuckER  {score_tucker(core, te_i, me_j, te_k): .6f}")
    print(f"KNN     {score_knn(te_i, te_k): .6f}")

    fwd = score_transms(te_i, me_j, alpha, te_k)
    back = score_transms(te_k, me_j, alpha, te_i)
    print(f"\nTransMS forward {float(fwd)!r}\n        swapped {float(back)!r}")
    print(f"TransD with zero projections {float(score_transd(te_i, zero, me_j, zero, te_k, zero))!r}")
    print(f"TransE                       {float(score_transe(te_i, me_j, te_k))!r}")


if __name__ == "__main__":
    main()
