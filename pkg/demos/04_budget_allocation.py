#!/usr/bin/env python3
"""Allocate one training budget four ways and compare the outcomes.

For a fixed FLOP budget this walks through:
  1. the dense closed-form optimum,
  2. the loss-optimal MoE size per expert count,
  3. the cheapest 16-expert model matching the 4-expert optimum's loss,
  4. the best 16-expert model at the 4-expert optimum's serving price.

The punchline mirrors the frontier sweep: a smaller, longer-trained
16-expert model can beat the 4-expert optimum on loss and cost at once.
"""

from moescale import (
    AffineLatencyModel,
    ArchitectureConvention,
    DenseLawParams,
    HardwareConfig,
    ScalingLawParams,
    dense_optimal,
    fit_geometry,
    frontier_sweep,
    loss_optimal_result,
    min_cost_for_bounded_loss,
    min_loss_for_bounded_cost,
    moe_loss_optimal,
    synth_profile,
)

BUDGET = 1.0e20

LAW = ScalingLawParams(
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
DENSE = DenseLawParams(l0=1.69, coef_N=406.4, coef_D=410.7, alpha=0.34, beta=0.28)

ARCH = ArchitectureConvention()
HW = HardwareConfig()
GEOM = fit_geometry(
    (
        (768.0, 12.0, 81395712.0),
        (1024.0, 16.0, 289406976.0),
        (1536.0, 16.0, 679477248.0),
    )
)
PROFILE = synth_profile(
    prompt=AffineLatencyModel(c0=0.004, c1=2.0e-5, c2=1.0e-12),
    decode=AffineLatencyModel(c0=0.002, c1=1.5e-6, c2=8.0e-13),
    batches=(1.0, 64.0, 512.0, 4096.0),
    model_sizes=(1.0e8, 1.0e9, 1.0e10, 1.0e11),
    gpu_counts=tuple(range(1, 9)),
)


def show(tag, r):
    print(f"  {tag:<24s} N={r.n_dense:.3e}  D={r.d_tokens:.3e}  "
          f"loss={r.predicted_loss:.4f}  cost={r.cost_per_token:.3e}  "
          f"G={r.best_gpus}  overtrain={r.overtrain_ratio:.3f}")


def main():
    print(f"budget: {BUDGET:.1e} training FLOPs\n")

    n, d = dense_optimal(BUDGET, DENSE)
    print(f"dense closed form: N={n:.3e}, D={d:.3e}, "
          f"tokens/param {d / n:.1f}")

    print("\nloss-optimal MoE per expert count:")
    for e in (1.0, 4.0, 8.0, 16.0, 32.0):
        n_opt, d_opt, loss = moe_loss_optimal(BUDGET, e, LAW, ARCH)
        print(f"  E={e:>4.0f}: N={n_opt:.3e}  D={d_opt:.3e}  loss={loss:.4f}")

    print("\nbase point and the two bounded searches (E_base=4 -> E'=16):")
    base = loss_optimal_result(BUDGET, 4.0, LAW, ARCH, HW, GEOM, PROFILE)
    show("loss-optimal E=4", base)
    cheap = min_cost_for_bounded_loss(BUDGET, 4.0, 16.0, LAW, ARCH, HW, GEOM, PROFILE)
    show("match loss, min cost", cheap)
    best = min_loss_for_bounded_cost(BUDGET, 4.0, 16.0, LAW, ARCH, HW, GEOM, PROFILE)
    show("match cost, min loss", best)
    print(f"  cost saved at equal loss: "
          f"{1.0 - cheap.cost_per_token / base.cost_per_token:.1%}")
    print(f"  loss gained at equal cost: "
          f"{base.predicted_loss - best.predicted_loss:.4f}")

    print("\nfrontier sweep, rows dominating the E=4 optimum:")
    rows = frontier_sweep((BUDGET,), (4.0, 16.0), LAW, ARCH, HW, GEOM, PROFILE)
    base_row = next(r for r in rows if r["kind"] == "optimal" and r["experts"] == 4.0)
    wins = [
        r for r in rows
        if r["kind"] == "curve" and r["experts"] == 16.0 and r["feasible"]
        and r["predicted_loss"] < base_row["predicted_loss"]
        and r["cost_per_token"] < base_row["cost_per_token"]
    ]
    print(f"  {len(wins)} of 64 sampled 16-expert sizes beat it on both axes")
    for r in wins[:: max(1, len(wins) // 4)]:
        print(f"    N={r['n_dense']:.3e}  loss={r['predicted_loss']:.4f}  "
              f"cost={r['cost_per_token']:.3e}  overtrain={r['overtrain_ratio']:.3f}")


if __name__ == "__main__":
    main()
