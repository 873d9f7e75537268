"""Shared fixtures: one canonical ground truth, hardware setup, and profile.

Every value here is frozen so tests are reproducible bit for bit. The
ground-truth law parameters are shaped like a real fit (saturating expert
transform, alpha close to gamma, small negative interaction) but the exact
numbers are arbitrary.
"""

import pytest

from moescale import (
    AffineLatencyModel,
    ArchitectureConvention,
    DenseLawParams,
    HardwareConfig,
    ScalingLawParams,
    SynthSpec,
    fit_geometry,
    synth_profile,
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

DENSE_TRUTH = DenseLawParams(
    l0=1.69,
    coef_N=406.4,
    coef_D=410.7,
    alpha=0.34,
    beta=0.28,
)

# 4 sizes x 5 expert counts x 5 token budgets = 100 runs.
DESIGN_N = (1.0e8, 2.0e8, 3.2e8, 7.3e8)
DESIGN_E = (1.0, 4.0, 8.0, 16.0, 32.0)
DESIGN_D = (2.5e9, 5.0e9, 7.5e9, 1.0e10, 2.0e10)

# Transformer shape rows (hidden width, layer count, parameter count) for
# the KV geometry fit; sizes span ~80M to ~680M.
GEOMETRY_ROWS = (
    (768.0, 12.0, 81395712.0),
    (1024.0, 16.0, 289406976.0),
    (1536.0, 16.0, 679477248.0),
)

PROMPT_MODEL = AffineLatencyModel(c0=0.004, c1=2.0e-5, c2=1.0e-12)
DECODE_MODEL = AffineLatencyModel(c0=0.002, c1=1.5e-6, c2=8.0e-13)
PROFILE_BATCHES = (1.0, 64.0, 512.0, 4096.0)
PROFILE_MODEL_BYTES = (1.0e8, 1.0e9, 1.0e10, 1.0e11)
PROFILE_GPUS = (1, 2, 3, 4, 5, 6, 7, 8)

# Verdict lines from the acceptance suite; echoed after the run so they
# survive output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def truth():
    return TRUTH


@pytest.fixture(scope="session")
def dense_truth():
    return DENSE_TRUTH


@pytest.fixture(scope="session")
def arch():
    return ArchitectureConvention()


@pytest.fixture(scope="session")
def hw():
    return HardwareConfig()


@pytest.fixture(scope="session")
def geom():
    return fit_geometry(GEOMETRY_ROWS)


@pytest.fixture(scope="session")
def profile():
    return synth_profile(
        PROMPT_MODEL,
        DECODE_MODEL,
        PROFILE_BATCHES,
        PROFILE_MODEL_BYTES,
        PROFILE_GPUS,
    )


@pytest.fixture(scope="session")
def runs_clean():
    """100 noise-free runs off the canonical design."""
    spec = SynthSpec(
        ground_truth=TRUTH,
        n_dense=DESIGN_N,
        d_tokens=DESIGN_D,
        experts=DESIGN_E,
        noise_sigma=0.0,
    )
    return synth_runs(spec)


@pytest.fixture(scope="session")
def runs_noisy():
    """Same design with 0.2% multiplicative log-normal noise."""
    spec = SynthSpec(
        ground_truth=TRUTH,
        n_dense=DESIGN_N,
        d_tokens=DESIGN_D,
        experts=DESIGN_E,
        noise_sigma=0.002,
        rng_seed=11,
    )
    return synth_runs(spec)
