#!/usr/bin/env python3
"""Walk the MoE scaling-law surface with a hand-picked set of constants.

Shows how predicted loss moves with model size, training tokens, and
expert count, and how the effective-expert transform saturates.
"""

import numpy as np

from moescale import (
    ArchitectureConvention,
    ScalingLawParams,
    effective_experts,
    predict_loss,
    suggested_learning_rate,
    total_params,
    training_flops,
)

PARAMS = ScalingLawParams(
    coef_N=406.4,
    coef_E=0.7,
    coef_D=410.7,
    irreducible=1.2,
    alpha=0.34,
    beta=0.45,
    gamma=0.30,
    interaction=-0.004,
    e_start=1.4,
    e_max=62.0,
)
ARCH = ArchitectureConvention()


def header(title):
    print(f"\n== {title} ==")


def main():
    header("effective experts (saturating transform)")
    print(f"  anchors: e_start={PARAMS.e_start}, e_max={PARAMS.e_max}")
    for e in (1, 2, 4, 8, 16, 32, 64, 256, 4096):
        ehat = effective_experts(e, PARAMS.e_start, PARAMS.e_max)
        print(f"  E={e:>5d} -> E_hat={ehat:8.3f}")

    header("loss vs size at D=20B tokens")
    for e in (1.0, 8.0, 32.0):
        row = [
            f"{predict_loss(n, 2.0e10, e, PARAMS):.4f}"
            for n in (1e8, 3e8, 1e9, 3e9)
        ]
        print(f"  E={e:>4.0f}: " + "  ".join(row) + "   (N = 1e8..3e9)")

    header("loss vs tokens at N=1B")
    for d in (1e9, 1e10, 1e11, 1e12):
        print(f"  D={d:8.0e}: loss={predict_loss(1.0e9, d, 8.0, PARAMS):.4f}")

    header("parameter and FLOP bookkeeping")
    n = 1.0e9
    for e in (1.0, 8.0, 32.0):
        tot = total_params(n, e, ARCH)
        flops = training_flops(n, 2.0e10, e, ARCH)
        print(
            f"  E={e:>4.0f}: total params {tot:.3e} "
            f"({tot / n:.2f}x dense), training flops {flops:.3e}"
        )

    header("learning-rate heuristic")
    for n in (1e8, 1e9, 1e10):
        print(f"  N={n:.0e}: lr = {suggested_learning_rate(n):.6f}")

    # larger E helps less and less once E_hat approaches e_max
    header("diminishing returns from experts")
    base = predict_loss(1.0e9, 2.0e10, 1.0, PARAMS)
    for e in (4.0, 16.0, 64.0, 256.0):
        gain = base - predict_loss(1.0e9, 2.0e10, e, PARAMS)
        print(f"  E={e:>5.0f}: loss improvement over dense {gain:.4f}")


if __name__ == "__main__":
    main()
