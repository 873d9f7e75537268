#!/usr/bin/env python3
"""Price out serving a model: batch limits, throughput, dollars per token.

Builds a synthetic latency profile from two affine stage models, fits KV
geometry from three transformer shapes, then walks the cost table over
GPU counts for a few model sizes and expert counts. Ends with the sanity
check the library also exposes as `moescale verify`: the analytic
throughput against a token-level simulation.
"""

from moescale import (
    AffineLatencyModel,
    ArchitectureConvention,
    HardwareConfig,
    cost_table,
    fit_geometry,
    max_batch_size,
    min_cost_over_gpus,
    serve_simulate,
    synth_profile,
    throughput,
    total_params,
)

HW = HardwareConfig()
ARCH = ArchitectureConvention()

# (hidden width, layers, params) rows anchor hl ~ mu * N^(2/3)
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


def main():
    print(f"geometry: hl = {GEOM.mu:.6f} * N^(2/3)")
    print(f"hardware: {HW.gpu_mem_bytes / 2**30:.0f} GiB/GPU, "
          f"prompt {HW.prompt_len} + output {HW.output_len} tokens, "
          f"${HW.cost_per_gpu_second}/GPU-second\n")

    n, experts = 1.3e9, 8.0
    n_total = total_params(n, experts, ARCH)
    print(f"model: N={n:.1e} dense-equivalent, E={experts:.0f} "
          f"({n_total:.2e} weights)")
    print(f"{'G':>3} {'batch':>10} {'tok/s':>12} {'$/token':>12}  note")
    for row in cost_table(n, experts, HW, GEOM, PROFILE, ARCH):
        if row["feasible"]:
            print(f"{row['gpus']:>3} {row['batch']:>10.1f} "
                  f"{row['throughput']:>12.1f} "
                  f"{row['cost_per_token']:>12.3e}")
        else:
            print(f"{row['gpus']:>3} {'-':>10} {'-':>12} {'-':>12}  {row['note']}")

    choice = min_cost_over_gpus(n, experts, HW, GEOM, PROFILE, ARCH)
    print(f"cheapest: G={choice.gpus} at {choice.cost_per_token:.3e} $/token\n")

    print("cheapest cost per token across sizes and expert counts:")
    sizes = (3.0e8, 1.3e9, 5.0e9)
    print("  " + " ".join(f"{'E=%.0f' % e:>12}" for e in (1.0, 8.0, 32.0)))
    for n in sizes:
        cells = []
        for e in (1.0, 8.0, 32.0):
            c = min_cost_over_gpus(n, e, HW, GEOM, PROFILE, ARCH).cost_per_token
            cells.append(f"{c:>12.3e}")
        print(f"  N={n:.0e} " + " ".join(cells))

    print("\nanalytic throughput vs token-level simulation (N=1.3e9, E=8):")
    for gpus in (2, 4, 8):
        rate = throughput(1.3e9, 8.0, gpus, HW, GEOM, PROFILE, ARCH)
        sim = serve_simulate(1.3e9, 8.0, gpus, HW, GEOM, PROFILE, ARCH, steps=2048)
        gap = abs(sim.tokens_per_second / rate - 1.0)
        print(f"  G={gpus}: analytic {rate:10.1f}  sim {sim.tokens_per_second:10.1f}"
              f"  gap {gap:.3%}")


if __name__ == "__main__":
    main()
