import numpy as np
import pytest

from cbl.environment import make_benign_env, make_worstcase_env
from cbl.errors import ConfigError
from cbl.harness import (RunConfig, env_stream, make_prior_marginals, perturb_row,
                         prior_stream, run_horizons, run_many, run_one, worker_count)
from cbl.stats import tv_unhalved

POLICIES = ["ucb", "cucb", "hacucb", "uniform", "corral", "const:2"]


@pytest.mark.parametrize("policy", POLICIES)
@pytest.mark.parametrize("env", [make_worstcase_env(3, 3), make_benign_env(2, 600)])
def test_batch_matches_single_runs(policy, env):
    T, M, base = (250 if policy == "corral" else 600), 6, 17
    curve = run_many(RunConfig(env, policy, T, M, base), workers=1)
    for i in range(M):
        single = np.cumsum(run_one(env, policy, T, base + i))
        assert np.array_equal(curve.cumulative[i], single)


def test_single_replicate_is_run_one():
    env = make_worstcase_env()
    curve = run_many(RunConfig(env, "hacucb", 400, 1, 9), workers=1)
    assert np.array_equal(curve.mean, np.cumsum(run_one(env, "hacucb", 400, 9)))
    assert np.all(curve.se == 0)


def test_grouping_and_order_do_not_change_results():
    env = make_benign_env(3, 800)
    cfg = RunConfig(env, "hacucb", 800, 10, 3)
    ref = run_many(cfg, workers=1)
    perm = np.random.default_rng(0).permutation(10)
    for kw in ({"chunk_size": 3}, {"chunk_size": 1, "replicate_order": perm},
               {"workers": 2, "chunk_size": 4}):
        kw.setdefault("workers", 1)
        other = run_many(cfg, **kw)
        assert np.array_equal(other.mean, ref.mean)
        assert np.array_equal(other.se, ref.se)
        assert np.array_equal(other.diagnostics["switch_round"], ref.diagnostics["switch_round"])


def test_bad_replicate_order():
    cfg = RunConfig(make_worstcase_env(), "ucb", 10, 3)
    with pytest.raises(ConfigError):
        run_many(cfg, workers=1, replicate_order=[0, 0, 1])


@pytest.mark.parametrize("policy", ["ucb", "cucb", "hacucb", "corral"])
def test_curves_monotone_and_nonnegative(policy):
    curve = run_many(RunConfig(make_worstcase_env(3, 2), policy, 500, 8, 1), workers=1)
    assert np.all(curve.cumulative >= 0)
    assert np.all(np.diff(curve.cumulative, axis=1) >= 0)
    assert np.all(np.diff(curve.mean) >= 0)


def test_zero_and_constant_regret():
    env = make_worstcase_env()
    assert np.all(run_one(env, "const:1", 100, 0) == 0)
    assert np.allclose(run_one(env, "const:2", 100, 0), 1 / 24, rtol=0, atol=1e-15)


def test_common_random_numbers_toggle():
    env = make_worstcase_env()
    a = RunConfig(env, "ucb", 10, 4, 5)
    b = RunConfig(env, "cucb", 10, 4, 5)
    assert np.array_equal(a.seeds(), b.seeds())
    a.common_random_numbers = b.common_random_numbers = False
    assert not np.array_equal(a.seeds(), b.seeds())


def test_streams_are_reproducible():
    assert env_stream(4).random() == env_stream(4).random()
    assert env_stream(4).random() != prior_stream(4).random()


def test_run_config_validation():
    env = make_worstcase_env()
    with pytest.raises(ConfigError):
        RunConfig(env, "ucb", 0)
    with pytest.raises(ConfigError):
        RunConfig(env, "ucb", 10, 0)
    with pytest.raises(ConfigError):
        RunConfig(env, "ucb", 10, marginal_source="perturbed:2.5")
    with pytest.raises(ConfigError):
        RunConfig(env, "nope", 10)


def test_incompatible_marginals():
    env = make_worstcase_env()
    with pytest.raises(ConfigError):
        run_one(env, "cucb", 10, 0, marginals=np.full((3, 2), 0.5))
    with pytest.raises(ConfigError):
        make_prior_marginals(env, np.full((2, 3), 1 / 3))


# Prior marginals -----------------------------------------------------------------------------

def test_exact_prior():
    env = make_worstcase_env(3, 4)
    m = make_prior_marginals(env, "exact")
    assert all(tv_unhalved(m.row(a), env.marginal[a]) == 0 for a in range(3))


def test_perturbed_row_example():
    rng = np.random.default_rng(0)
    row = perturb_row([0.5, 0.5], 0.1, rng)
    assert sorted(row.tolist()) == pytest.approx([0.45, 0.55], abs=1e-15)
    assert tv_unhalved(row, [0.5, 0.5]) == pytest.approx(0.1, abs=1e-15)


@pytest.mark.parametrize("eps", [0.0, 0.05, 0.3, 0.7])
def test_perturbed_prior_distance(eps):
    env = make_worstcase_env(4, 3)
    m = make_prior_marginals(env, f"perturbed:{eps}", prior_stream(3))
    for a in range(4):
        assert tv_unhalved(m.row(a), env.marginal[a]) == pytest.approx(eps, abs=1e-12)


def test_perturbation_needs_mass():
    env = make_benign_env(2, 1000)
    with pytest.raises(ConfigError):
        make_prior_marginals(env, "perturbed:1.9999", prior_stream(0))
    with pytest.raises(ConfigError):
        make_prior_marginals(env, "perturbed:x")
    with pytest.raises(ConfigError):
        make_prior_marginals(env, "fuzzy")


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("CBL_THREADS", "1")
    assert worker_count() == 1
    monkeypatch.setenv("CBL_THREADS", "many")
    with pytest.raises(ConfigError):
        worker_count()


# Growth-rate detector ---------------------------------------------------------------------------

@pytest.mark.parametrize("name,env", [
    ("benign", make_benign_env(2, 5000)),
    ("benign10", make_benign_env(10, 5000)),
    ("worstcase", make_worstcase_env()),
])
def test_hac_regret_grows_sublinearly(name, env):
    res = run_horizons(RunConfig(env, "hacucb", 1250, 50, 11), [1250, 2500, 5000], workers=1)
    finals = [c.final for _, c in res]
    for lo, hi in zip(finals, finals[1:]):
        assert hi / lo < 2 - 0.1, f"{name}: ratio {hi / lo:.3f}"


def test_strict_protocol_seeds():
    env = make_worstcase_env()
    res = run_horizons(RunConfig(env, "ucb", 100, 3, 7), [100, 200], workers=1)
    second = run_many(RunConfig(env, "ucb", 200, 3, 10), workers=1)
    assert np.array_equal(res[1][1].mean, second.mean)
