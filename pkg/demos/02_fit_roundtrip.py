#!/usr/bin/env python3
"""Synthesize noisy training runs from a known law, then fit it back.

The fit never sees the ground truth, only the 100 runs. With 0.2%
multiplicative noise the recovered parameters land close enough that
held-out predictions are good to a few parts in a thousand.
"""

import numpy as np

from moescale import (
    FitConfig,
    ScalingLawParams,
    SynthSpec,
    fit_moe,
    predict_loss,
    rmsle,
    synth_runs,
)

TRUTH = ScalingLawParams(
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

SPEC = SynthSpec(
    ground_truth=TRUTH,
    n_dense=(1.0e8, 2.0e8, 3.2e8, 7.3e8),
    d_tokens=(2.5e9, 5.0e9, 7.5e9, 1.0e10, 2.0e10),
    experts=(1.0, 4.0, 8.0, 16.0, 32.0),
    noise_sigma=0.002,
    rng_seed=11,
)


def main():
    runs = synth_runs(SPEC)
    print(f"synthesized {len(runs)} runs, sigma={SPEC.noise_sigma}")

    report = fit_moe(runs, FitConfig(max_starts=512, rng_seed=0))
    print(f"starts run: {report.starts_run}, train/holdout: "
          f"{report.n_train}/{report.n_holdout}")
    print(f"robust objective at the winner: {report.objective:.3e}")
    print(f"rmsle  in-sample: {report.rmsle:.3e}")
    print(f"rmsle  held-out:  {report.rmsle_holdout:.3e}")
    print(f"rmsle  vs truth on all runs: {rmsle(report.params, runs):.3e}")

    print("\nparameter recovery (truth -> fitted):")
    fitted = report.params
    for name in (
        "coef_N", "coef_E", "coef_D", "irreducible",
        "alpha", "beta", "gamma", "interaction", "e_start", "e_max",
    ):
        t = getattr(TRUTH, name)
        f = getattr(fitted, name)
        print(f"  {name:<12s} {t:>12.6g} -> {f:>12.6g}")

    # saturation anchors are weakly identified off a 1..32 expert design;
    # what matters is the law's predictions, not the raw constants
    probe = [(1.5e9, 4.0e10, 8.0), (5.0e8, 1.0e10, 16.0), (2.0e9, 8.0e10, 1.0)]
    print("\nextrapolation probes (truth vs fitted loss):")
    for n, d, e in probe:
        lt = predict_loss(n, d, e, TRUTH)
        lf = predict_loss(n, d, e, fitted)
        print(f"  N={n:.1e} D={d:.1e} E={e:>4.0f}: {lt:.4f} vs {lf:.4f}")


if __name__ == "__main__":
    main()
