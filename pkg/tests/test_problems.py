"""Problem zoo tests: gradients, designed conditioning, sharding, sampling."""

import numpy as np
import pytest

from gradcomp import (
    ConfigError,
    ProblemSpec,
    SampleHandle,
    Shard,
    export_dataset,
    full_grad,
    load_dataset,
    loss,
    make_problem,
    minibatch_indices,
    partition_data,
    shard_full_grad,
    shard_sampler,
    smoothness_L,
    smoothness_L_sample,
    stoch_grad,
    variance_sigma2,
)

QUAD = ProblemSpec(kind="quadratic", spectrum=(0.5, 1.0, 2.0, 4.0))
LIN = ProblemSpec(kind="lin_reg", dim=6, n_samples=48, noise_std=0.1, condition=10.0, seed=3)
LOG = ProblemSpec(kind="log_reg", dim=5, n_samples=40, l2_reg=0.05, condition=8.0, seed=3)


def central_difference(problem, x, h=1e-6):
    out = np.zeros_like(x)
    for i in range(x.size):
        step = np.zeros_like(x)
        step[i] = h
        out[i] = (loss(problem, x + step) - loss(problem, x - step)) / (2.0 * h)
    return out


# ---------------------------------------------------------------------------
# spec validation


def test_spec_rejects_unknown_kind():
    with pytest.raises(ConfigError):
        ProblemSpec(kind="cubic")


def test_quadratic_needs_a_nonnegative_spectrum():
    with pytest.raises(ConfigError):
        ProblemSpec(kind="quadratic")
    with pytest.raises(ConfigError):
        ProblemSpec(kind="quadratic", spectrum=(1.0, -0.5))


def test_dataset_problems_need_enough_samples():
    with pytest.raises(ConfigError):
        ProblemSpec(kind="lin_reg", dim=10, n_samples=9)
    with pytest.raises(ConfigError):
        ProblemSpec(kind="log_reg", dim=4, n_samples=16, condition=0.5)


def test_handle_rejects_negative_fields():
    with pytest.raises(ConfigError):
        SampleHandle(t=-1, worker=0)
    with pytest.raises(ConfigError):
        SampleHandle(t=0, worker=0, draw=-2)
    with pytest.raises(ConfigError):
        SampleHandle(t=0, worker=0, salt=-1)


# ---------------------------------------------------------------------------
# gradients and closed forms


@pytest.mark.parametrize("spec", [QUAD, LIN, LOG], ids=["quadratic", "lin_reg", "log_reg"])
def test_full_grad_matches_central_differences(spec):
    problem = make_problem(spec)
    rng = np.random.default_rng(11)
    for _ in range(3):
        x = rng.standard_normal(problem.dim)
        g = full_grad(problem, x)
        fd = central_difference(problem, x)
        assert np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g)) < 1e-6


def test_quadratic_closed_forms():
    problem = make_problem(QUAD)
    x = np.array([1.0, -2.0, 0.5, 3.0])
    assert loss(problem, x) == pytest.approx(0.5 * float(np.dot(x, problem.h * x)))
    assert np.array_equal(full_grad(problem, x), problem.h * x)
    assert np.array_equal(problem.minimizer(), np.zeros(4))
    assert problem.f_star() == 0.0
    assert smoothness_L(problem) == 4.0


def test_lin_reg_gram_spectrum_is_designed():
    problem = make_problem(LIN)
    gram = problem.x_mat.T @ problem.x_mat / LIN.n_samples
    eigs = np.sort(np.linalg.eigvalsh(gram))[::-1]
    expected = np.geomspace(1.0, 1.0 / LIN.condition, LIN.dim)
    assert np.allclose(eigs, expected, atol=1e-9)
    assert smoothness_L(problem) == pytest.approx(1.0, abs=1e-9)


def test_lin_reg_minimizer_zeroes_the_gradient():
    problem = make_problem(LIN)
    g = full_grad(problem, problem.minimizer())
    assert np.linalg.norm(g) < 1e-10
    assert problem.f_star() <= loss(problem, np.ones(LIN.dim))


def test_log_reg_labels_are_signs_and_loss_is_regularized():
    problem = make_problem(LOG)
    assert set(np.unique(problem.target())) <= {-1.0, 1.0}
    base = ProblemSpec(kind="log_reg", dim=5, n_samples=40, l2_reg=0.0, condition=8.0, seed=3)
    plain = make_problem(base)
    x = np.full(5, 0.7)
    assert loss(problem, x) == pytest.approx(
        loss(plain, x) + 0.5 * 0.05 * float(np.dot(x, x))
    )


@pytest.mark.parametrize("spec", [LIN, LOG], ids=["lin_reg", "log_reg"])
def test_per_sample_smoothness_dominates_mean_smoothness(spec):
    problem = make_problem(spec)
    assert smoothness_L_sample(problem) >= smoothness_L(problem)


def test_same_spec_rebuilds_the_same_dataset():
    a = make_problem(LIN)
    b = make_problem(LIN)
    assert np.array_equal(a.x_mat, b.x_mat)
    assert np.array_equal(a.y, b.y)
    shifted = make_problem(
        ProblemSpec(kind="lin_reg", dim=6, n_samples=48, noise_std=0.1, condition=10.0, seed=4)
    )
    assert not np.array_equal(a.x_mat, shifted.x_mat)


# ---------------------------------------------------------------------------
# partitioning


def test_partition_sizes_differ_by_at_most_one():
    problem = make_problem(LIN)
    shards = partition_data(problem, 5, seed=0)
    sizes = [s.size() for s in shards]
    assert sum(sizes) == LIN.n_samples
    assert max(sizes) - min(sizes) <= 1


def test_partition_is_a_disjoint_cover():
    problem = make_problem(LIN)
    shards = partition_data(problem, 7, seed=2)
    merged = np.concatenate([s.indices for s in shards])
    assert np.array_equal(np.sort(merged), np.arange(LIN.n_samples))


def test_partition_is_deterministic_in_seed():
    problem = make_problem(LIN)
    a = partition_data(problem, 4, seed=5)
    b = partition_data(problem, 4, seed=5)
    c = partition_data(problem, 4, seed=6)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.indices, sb.indices)
    assert any(not np.array_equal(sa.indices, sc.indices) for sa, sc in zip(a, c))


def test_full_heterogeneity_sorts_shards_by_target():
    problem = make_problem(LIN)
    shards = partition_data(problem, 4, seed=0, heterogeneity=1.0)
    means = [problem.target()[s.indices].mean() for s in shards]
    assert means == sorted(means)
    mixed = partition_data(problem, 4, seed=0, heterogeneity=0.0)
    assert any(
        not np.array_equal(s.indices, m.indices) for s, m in zip(shards, mixed)
    )


def test_partition_validates_inputs():
    problem = make_problem(LIN)
    with pytest.raises(ConfigError):
        partition_data(problem, 0, seed=0)
    with pytest.raises(ConfigError):
        partition_data(problem, 2, seed=0, heterogeneity=1.5)
    with pytest.raises(ConfigError):
        partition_data(problem, LIN.n_samples + 1, seed=0)


def test_sample_free_problems_get_empty_shards():
    problem = make_problem(QUAD)
    shards = partition_data(problem, 3, seed=0)
    assert all(s.indices is None for s in shards)
    assert all(s.size() == 0 for s in shards)


# ---------------------------------------------------------------------------
# sampling


def test_minibatch_replay_is_bitwise():
    problem = make_problem(LIN)
    shard = partition_data(problem, 2, seed=1)[1]
    handle = SampleHandle(t=7, worker=1, draw=0, salt=42)
    first = minibatch_indices(problem, shard, handle)
    again = minibatch_indices(problem, shard, handle)
    assert np.array_equal(first, again)
    assert np.all(np.isin(first, shard.indices))


def test_handle_fields_separate_sampling_streams():
    problem = make_problem(
        ProblemSpec(kind="lin_reg", dim=6, n_samples=48, batch_size=16, seed=3)
    )
    shard = partition_data(problem, 1, seed=1)[0]
    base = minibatch_indices(problem, shard, SampleHandle(t=3, worker=0))
    for other in (
        SampleHandle(t=4, worker=0),
        SampleHandle(t=3, worker=0, draw=1),
        SampleHandle(t=3, worker=0, salt=9),
    ):
        assert not np.array_equal(base, minibatch_indices(problem, shard, other))


def test_stoch_grad_reuses_the_handles_samples_across_points():
    problem = make_problem(LIN)
    shard = partition_data(problem, 1, seed=1)[0]
    handle = SampleHandle(t=5, worker=0)
    idx = minibatch_indices(problem, shard, handle)
    x = np.linspace(-1.0, 1.0, 6)
    expected = problem.grad_at(x, idx)
    assert np.array_equal(stoch_grad(problem, shard, x, handle), expected)


def test_stoch_grad_on_sample_free_problem_is_exact():
    problem = make_problem(QUAD)
    shard = partition_data(problem, 1, seed=0)[0]
    x = np.array([1.0, 2.0, -1.0, 0.5])
    assert np.array_equal(
        stoch_grad(problem, shard, x, SampleHandle(t=0, worker=0)), full_grad(problem, x)
    )


def test_shard_sampler_stamps_its_salt():
    problem = make_problem(LIN)
    shards = partition_data(problem, 2, seed=1)
    salted = shard_sampler(problem, shards, salt=17)
    unsalted = shard_sampler(problem, shards, salt=0)
    x = np.ones(6)
    handle = SampleHandle(t=3, worker=1)
    direct = stoch_grad(problem, shards[1], x, SampleHandle(t=3, worker=1, salt=17))
    assert np.array_equal(salted(x, handle), direct)
    assert not np.array_equal(salted(x, handle), unsalted(x, handle))


def test_empty_shard_is_rejected():
    problem = make_problem(LIN)
    empty = Shard(worker=0, indices=np.empty(0, dtype=np.int64))
    with pytest.raises(ConfigError):
        minibatch_indices(problem, empty, SampleHandle(t=0, worker=0))
    with pytest.raises(ConfigError):
        shard_full_grad(problem, empty, np.ones(6))


def test_shard_full_grad_over_everything_matches_full_grad():
    problem = make_problem(LIN)
    whole = partition_data(problem, 1, seed=0)[0]
    x = np.linspace(0.0, 1.0, 6)
    assert np.allclose(shard_full_grad(problem, whole, x), full_grad(problem, x), atol=1e-15)


# ---------------------------------------------------------------------------
# variance and export


def test_variance_estimate_is_positive_and_deterministic():
    problem = make_problem(LIN)
    shard = partition_data(problem, 1, seed=0)[0]
    x = np.ones(6)
    a = variance_sigma2(problem, shard, x, trials=64)
    b = variance_sigma2(problem, shard, x, trials=64)
    assert a == b
    assert a > 0.0
    with pytest.raises(ConfigError):
        variance_sigma2(problem, shard, x, trials=1)


def test_variance_is_zero_without_sampling_noise():
    problem = make_problem(QUAD)
    shard = partition_data(problem, 1, seed=0)[0]
    assert variance_sigma2(problem, shard, np.ones(4), trials=8) == 0.0


def test_dataset_round_trips_through_csv(tmp_path):
    problem = make_problem(LIN)
    path = tmp_path / "data.csv"
    export_dataset(problem, path)
    x_mat, target = load_dataset(path)
    assert np.array_equal(x_mat, problem.x_mat)
    assert np.array_equal(target, problem.y)


def test_sample_free_problems_have_nothing_to_export(tmp_path):
    with pytest.raises(ConfigError):
        export_dataset(make_problem(QUAD), tmp_path / "data.csv")
