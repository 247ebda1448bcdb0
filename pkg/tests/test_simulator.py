"""Simulator tests.

The protocol steps are checked against hand-unrolled arithmetic written
directly in the tests: independent sequences of numpy expressions that
mirror what one step is supposed to do, kept deliberately free of the
package's own compression and compensation helpers.
"""

import numpy as np
import pytest

from gradcomp import (
    AlphaSchedule,
    CompressorSpec,
    ConfigError,
    DivergenceError,
    ProblemSpec,
    RunConfig,
    SchemeSpec,
    run,
    scheme_coefficients,
)

QUAD2 = ProblemSpec(kind="quadratic", spectrum=(1.0, 2.0))
LIN = ProblemSpec(
    kind="lin_reg", dim=8, n_samples=64, noise_std=0.1, condition=10.0, batch_size=1, seed=3
)


def one_bit_by_hand(x):
    """Sign codec written out longhand for the oracle unrolls."""
    scale = np.abs(x).sum() / x.size
    compressed = scale * np.where(x < 0.0, -1.0, 1.0)
    return compressed, x - compressed


# ---------------------------------------------------------------------------
# config validation


def test_config_validation():
    with pytest.raises(ConfigError):
        RunConfig(problem=QUAD2, topology="ring")
    with pytest.raises(ConfigError):
        RunConfig(problem=QUAD2, topology="single_worker", n_workers=2)
    with pytest.raises(ConfigError):
        RunConfig(problem=QUAD2, steps=0)
    with pytest.raises(ConfigError):
        RunConfig(problem=QUAD2, gamma=-0.1)
    with pytest.raises(ConfigError):
        RunConfig(problem=QUAD2, b0=0)
    with pytest.raises(ConfigError):
        RunConfig(problem=QUAD2, seed=-1)


def test_compressor_seeds_inherit_the_run_seed():
    config = RunConfig(
        problem=QUAD2,
        compressor=CompressorSpec("rand_k", k=1),
        server_compressor=CompressorSpec("stoch_quant", levels=2, seed=11),
        n_workers=2,
        seed=7,
    )
    worker, server = config.resolved_compressors()
    assert worker.seed == 7
    assert server.seed == 11

    config = RunConfig(problem=QUAD2, compressor=CompressorSpec("rand_k", k=1, seed=5))
    worker, server = config.resolved_compressors()
    assert worker.seed == 5
    assert server.seed == 5


# ---------------------------------------------------------------------------
# hand-unrolled oracles


def test_three_steps_of_two_step_compensation_by_hand():
    """Single worker, quadratic, constant alpha: every float op re-derived."""
    alpha_c = 0.5
    gamma = 0.1
    beta = 1.0
    h = np.array([1.0, 2.0])
    config = RunConfig(
        problem=QUAD2,
        estimator="momentum",
        schedule=AlphaSchedule(kind="constant", alpha=alpha_c),
        scheme=SchemeSpec(kind="two_step", beta=beta),
        compressor=CompressorSpec("one_bit"),
        topology="single_worker",
        n_workers=1,
        steps=4,
        gamma=gamma,
        b0=1,
        record_history=True,
    )
    trace = run(config)

    x = np.ones(2)
    v = h * x  # warm start from one exact gradient
    xs = [x.copy()]
    vs = [v.copy()]
    x = x - gamma * v
    e = np.zeros(2)
    d1 = np.zeros(2)
    d2 = np.zeros(2)
    w1 = (alpha_c / alpha_c) * (2.0 - alpha_c)
    w2 = (alpha_c / alpha_c) * (1.0 - alpha_c)
    for _ in range(1, 4):
        e = (1.0 - beta) * e + beta * (w1 * d1 - w2 * d2)
        a_vec = h * x
        compressed, residual = one_bit_by_hand(a_vec + e)
        d2, d1 = d1, residual
        v = (1.0 - alpha_c) * v + alpha_c * compressed
        xs.append(x.copy())
        vs.append(v.copy())
        x = x - gamma * v

    assert np.array_equal(trace.history.x, np.stack(xs))
    assert np.array_equal(trace.history.v, np.stack(vs))
    assert np.array_equal(trace.final_x, x)


def test_single_compensation_at_unit_alpha_is_classic_error_feedback():
    """sgd with single compensation and beta=1 reduces to the memory
    recursion x' = x - gamma C[g + e], e' = g + e - C[g + e]."""
    gamma = 0.05
    h = np.array([1.0, 2.0])
    config = RunConfig(
        problem=QUAD2,
        estimator="sgd",
        schedule=AlphaSchedule(kind="constant", alpha=1.0),
        scheme=SchemeSpec(kind="single", beta=1.0),
        compressor=CompressorSpec("one_bit"),
        topology="single_worker",
        n_workers=1,
        steps=5,
        gamma=gamma,
        b0=1,
        record_history=True,
    )
    trace = run(config)

    x = np.ones(2)
    v = h * x
    x = x - gamma * v
    e = np.zeros(2)
    xs = [np.ones(2)]
    for _ in range(1, 5):
        g = h * x
        compressed, residual = one_bit_by_hand(g + e)
        e = residual
        xs.append(x.copy())
        x = x - gamma * compressed

    assert np.array_equal(trace.history.x, np.stack(xs))
    assert np.array_equal(trace.final_x, x)


@pytest.mark.parametrize("kind", ["none", "single", "two_step"])
def test_aggregated_update_identity(kind):
    """v_t recombines from the recorded aggregates: for every step,
    v_t = (1-a) v_{t-1} + a abar_t + eta2 ebar_t - eta1 dbar_t."""
    alpha_c = 0.3
    config = RunConfig(
        problem=LIN,
        estimator="momentum",
        schedule=AlphaSchedule(kind="constant", alpha=alpha_c),
        scheme=SchemeSpec(kind=kind, beta=0.3),
        compressor=CompressorSpec("one_bit"),
        topology="double_compression",
        n_workers=4,
        steps=120,
        gamma=0.01,
        b0=4,
        seed=2,
        record_history=True,
    )
    trace = run(config)
    hist = trace.history
    eta1, eta2, _, _ = scheme_coefficients(kind, alpha_c)
    worst = 0.0
    for t in range(1, trace.t_effective):
        predicted = (
            (1.0 - alpha_c) * hist.v[t - 1]
            + alpha_c * hist.a_bar[t]
            + eta2 * hist.e_bar[t]
            - eta1 * hist.delta_bar[t]
        )
        err = np.linalg.norm(predicted - hist.v[t]) / max(1e-30, np.linalg.norm(hist.v[t]))
        worst = max(worst, err)
    assert worst < 1e-12


# ---------------------------------------------------------------------------
# trajectory structure


def test_history_rows_satisfy_the_descent_recursion():
    config = RunConfig(
        problem=LIN,
        estimator="storm",
        schedule=AlphaSchedule(kind="inverse_t"),
        scheme=SchemeSpec(kind="two_step", beta=0.3),
        compressor=CompressorSpec("top_k", k=2),
        n_workers=2,
        steps=50,
        gamma=0.02,
        b0=2,
        record_history=True,
    )
    trace = run(config)
    hist = trace.history
    assert np.array_equal(hist.x[0], trace.x0)
    assert np.array_equal(hist.v[0], trace.v0)
    assert np.array_equal(hist.a_bar[0], trace.v0)
    assert not hist.e_bar[0].any()
    assert not hist.delta_bar[0].any()
    for t in range(1, trace.t_effective):
        assert np.array_equal(hist.x[t], hist.x[t - 1] - config.gamma * hist.v[t - 1])
    assert np.array_equal(trace.final_x, hist.x[-1] - config.gamma * hist.v[-1])


def test_zero_step_size_freezes_the_iterate():
    config = RunConfig(problem=QUAD2, gamma=0.0, steps=20, record_history=True)
    trace = run(config)
    assert np.array_equal(trace.history.x, np.ones((20, 2)))
    assert np.unique(trace.grad_norm_sq).size == 1


def test_x0_scale_sets_the_start():
    config = RunConfig(problem=QUAD2, steps=2, x0_scale=-2.5)
    trace = run(config)
    assert np.array_equal(trace.x0, np.full(2, -2.5))


# ---------------------------------------------------------------------------
# divergence


def test_divergence_raises_with_the_partial_trace():
    config = RunConfig(
        problem=ProblemSpec(kind="quadratic", spectrum=(1.0,)),
        estimator="momentum",
        schedule=AlphaSchedule(kind="constant", alpha=1.0),
        topology="single_worker",
        gamma=3.0,
        steps=200,
        record_history=True,
    )
    with pytest.raises(DivergenceError) as excinfo:
        run(config)
    exc = excinfo.value
    assert exc.step >= 1
    assert exc.trace is not None
    assert exc.trace.t_effective == exc.step + 1
    assert np.array_equal(exc.trace.steps, np.arange(exc.step + 1))
    assert exc.trace.history.x.shape == (exc.step + 1, 1)
    # the iterate really did escape
    assert np.linalg.norm(exc.trace.final_x) > 1e12


# ---------------------------------------------------------------------------
# determinism and accounting


def test_runs_are_bitwise_deterministic():
    config = RunConfig(
        problem=LIN,
        estimator="momentum",
        schedule=AlphaSchedule(kind="constant", alpha=0.2),
        scheme=SchemeSpec(kind="two_step", beta=0.3),
        compressor=CompressorSpec("rand_k", k=3),
        n_workers=2,
        steps=60,
        gamma=0.01,
        b0=2,
        seed=5,
    )
    a = run(config)
    b = run(config)
    assert np.array_equal(a.final_x, b.final_x)
    assert np.array_equal(a.grad_norm_sq, b.grad_norm_sq)
    assert np.array_equal(a.cum_bits, b.cum_bits)


def test_the_seed_changes_the_sample_stream():
    base = dict(
        problem=LIN,
        estimator="momentum",
        schedule=AlphaSchedule(kind="constant", alpha=0.2),
        scheme=SchemeSpec(kind="two_step", beta=0.3),
        compressor=CompressorSpec("one_bit"),
        n_workers=2,
        steps=40,
        gamma=0.01,
        b0=2,
    )
    a = run(RunConfig(seed=0, **base))
    b = run(RunConfig(seed=1, **base))
    assert not np.array_equal(a.final_x, b.final_x)


def test_bit_accounting_per_topology():
    quad10 = ProblemSpec(kind="quadratic", spectrum=tuple(np.linspace(1.0, 2.0, 10)))
    base = dict(
        problem=quad10,
        estimator="momentum",
        schedule=AlphaSchedule(kind="constant", alpha=0.5),
        scheme=SchemeSpec(kind="two_step", beta=0.3),
        compressor=CompressorSpec("one_bit"),
        steps=3,
        gamma=0.01,
    )
    per_message = 10 + 64

    double = run(RunConfig(topology="double_compression", n_workers=4, **base))
    assert double.cum_bits[0] == 5 * 10 * 64
    assert double.cum_bits[2] == 5 * 10 * 64 + 2 * (4 * per_message + per_message)

    single_round = run(RunConfig(topology="single_round", n_workers=4, **base))
    assert single_round.cum_bits[2] == 5 * 10 * 64 + 2 * (4 * per_message + 10 * 64)

    solo = run(RunConfig(topology="single_worker", n_workers=1, **base))
    assert solo.cum_bits[0] == 0
    assert solo.cum_bits[2] == 2 * per_message


def test_server_compression_only_in_double_topology():
    """single_round broadcasts the raw average, so with an identity worker
    codec the server adds no residual and the trace shows none."""
    config = RunConfig(
        problem=LIN,
        compressor=CompressorSpec("identity"),
        server_compressor=CompressorSpec("one_bit"),
        scheme=SchemeSpec(kind="two_step", beta=0.3),
        schedule=AlphaSchedule(kind="constant", alpha=0.5),
        topology="single_round",
        n_workers=2,
        steps=10,
        gamma=0.01,
    )
    trace = run(config)
    assert not trace.server_delta_norm.any()
    assert not trace.worker_delta_norm.any()

    compressed = run(
        RunConfig(
            problem=LIN,
            compressor=CompressorSpec("identity"),
            server_compressor=CompressorSpec("one_bit"),
            scheme=SchemeSpec(kind="two_step", beta=0.3),
            schedule=AlphaSchedule(kind="constant", alpha=0.5),
            topology="double_compression",
            n_workers=2,
            steps=10,
            gamma=0.01,
        )
    )
    assert compressed.server_delta_norm[1:].any()
