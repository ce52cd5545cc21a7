import math

import numpy as np
import pytest

from cbl.environment import Environment, RewardLaw, make_benign_env, make_worstcase_env
from cbl.errors import ConfigError, DomainError
from cbl.harness import RunConfig, policy_stream, run_many, run_one
from cbl.policies import (HACUCB, Corral, CorralMaster, Phase, causal_regret_bound,
                          corral_learning_rate, cucb_step, explore_lengths, freedman_radius,
                          hac_slack, hac_test_failures, log_barrier_omd, make_hac_state,
                          make_policy, marginal_replacement_threshold, parse_policy_name, ucb_step)
from cbl.stats import SufficientStats, default_delta, radius

import fixtures as fx
import oracles


# Hand-traced five-round fixtures -------------------------------------------------------

def test_ucb_hand_trace():
    env = make_worstcase_env()
    pol = make_policy("ucb", env, 5)
    assert fx.drive(pol, fx.table_outcome(fx.UCB_TABLE), 2, 2, 5) == fx.UCB_EXPECTED
    assert oracles.ucb_trace(fx.table_outcome(fx.UCB_TABLE), 2, 2, 5) == fx.UCB_EXPECTED


def test_cucb_hand_trace():
    env = make_worstcase_env()
    pol = make_policy("cucb", env, 5, marginals=fx.CUCB_MARGINALS)
    assert fx.drive(pol, fx.table_outcome(fx.CUCB_TABLE), 2, 2, 5) == fx.CUCB_EXPECTED
    assert oracles.cucb_trace(fx.table_outcome(fx.CUCB_TABLE), fx.CUCB_MARGINALS, 2, 2, 5) == fx.CUCB_EXPECTED


def test_hac_hand_trace():
    env = make_worstcase_env()
    pol = make_policy("hacucb", env, 5, marginals=fx.CUCB_MARGINALS)
    seq, phases = fx.drive(pol, fx.table_outcome(fx.UCB_TABLE), 2, 2, 5, phases=True)
    assert seq == fx.HAC_EXPECTED
    assert phases == ["Explore1"] * 5


# Longer traces against the plain-Python reference ----------------------------------------

@pytest.mark.parametrize("seed", range(4))
@pytest.mark.parametrize("T", [37, 400])
def test_ucb_cucb_match_reference(seed, T):
    env = make_worstcase_env(3, 3, A0=[1])
    out = fx.random_outcome(env, seed, T)
    m = env.marginal.tolist()
    assert fx.drive(make_policy("ucb", env, T), out, 3, 3, T) == oracles.ucb_trace(out, 3, 3, T)
    assert fx.drive(make_policy("cucb", env, T), out, 3, 3, T) == oracles.cucb_trace(out, m, 3, 3, T)


@pytest.mark.parametrize("env,T,prior", [
    (make_worstcase_env(), 600, None),
    (make_benign_env(3, 1500), 1500, None),
    (make_benign_env(2, 3000), 3000, [[0.1, 0.9], [0.9, 0.1]]),
    (make_worstcase_env(4, 2), 700, [[1.0, 0.0]] * 4),
])
def test_hac_matches_reference(env, T, prior):
    m = env.marginal.tolist() if prior is None else prior
    for seed in range(2):
        out = fx.random_outcome(env, seed, T)
        pol = make_policy("hacucb", env, T, marginals=m)
        seq, phases = fx.drive(pol, out, env.n_actions, env.n_contexts, T, phases=True)
        ref_seq, ref_phases, replaced = oracles.hac_trace(out, m, env.n_actions, env.n_contexts, T)
        assert seq == ref_seq
        assert phases == ref_phases
        assert bool(pol.state.replaced) == replaced


def _one_context_env():
    # both arms land in the single context; arm 0 always pays, arm 1 never does
    return Environment([0, 1], [0], [[1.0], [1.0]],
                       [[RewardLaw.point_mass(1.0)], [RewardLaw.point_mass(0.0)]])


def test_fallback_path_matches_reference():
    # with the slack switched off the test rejects right after exploration
    env = _one_context_env()
    T = 2000
    out = fx.table_outcome([[(0, 1.0)] * T, [(0, 0.0)] * T])
    pol = make_policy("hacucb", env, T)
    pol.state.slack = 0.0
    seq, phases = fx.drive(pol, out, 2, 1, T, phases=True)
    ref_seq, ref_phases, _ = oracles.hac_trace(out, [[1.0], [1.0]], 2, 1, T, slack=0.0)
    assert seq == ref_seq
    assert phases == ref_phases
    first = phases.index("Fallback")
    assert first == 2 * sum(explore_lengths(2, T))
    assert set(phases[first:]) == {"Fallback"}
    assert int(pol.state.switch_round) == first + 1


def test_fallback_is_absorbing_and_follows_ucb():
    env = _one_context_env()
    T = 2000
    pol = make_policy("hacucb", env, T)
    pol.state.slack = 0.0
    s = SufficientStats(2, 1)
    fell = False
    for _ in range(T):
        a = pol.select(s)
        if pol.phase_label() == "Fallback":
            fell = True
        if fell:
            assert pol.phase_label() == "Fallback"
            assert not pol.state.flag
            assert a == ucb_step(s, default_delta(T))
        y = 1.0 if a == 0 else 0.0
        s.update(a, 0, y)
    assert fell


# Exploration and test arithmetic ----------------------------------------------------------

def test_explore_lengths():
    assert explore_lengths(4, 10_000) == (100, 25)
    st = make_hac_state(np.full((4, 2), 0.5), 10_000)
    assert st.forced_rounds == 500
    assert explore_lengths(3, 1000) == (math.ceil(4 * math.sqrt(1000) / 3), math.ceil(math.sqrt(1000) / 3))


def test_round_robin_exploration():
    env = make_benign_env(3, 2000)
    seq, phases = fx.drive(make_policy("hacucb", env, 2000), fx.random_outcome(env, 0, 2000),
                           3, 2, 2000, phases=True)
    e1, e2 = explore_lengths(3, 2000)
    assert seq[:3 * e1] == [t % 3 for t in range(3 * e1)]
    assert seq[3 * e1:3 * (e1 + e2)] == [t % 3 for t in range(3 * e2)]
    assert phases[:3 * e1] == ["Explore1"] * (3 * e1)
    assert phases[3 * e1:3 * (e1 + e2)] == ["Explore2"] * (3 * e2)
    assert phases[3 * (e1 + e2)] in ("Tested", "Fallback")


def test_phase_order_is_monotone():
    order = ["Explore1", "Explore2", "Tested", "Fallback"]
    env = make_worstcase_env()
    for seed in range(3):
        _, phases = fx.drive(make_policy("hacucb", env, 900), fx.random_outcome(env, seed, 900),
                             2, 2, 900, phases=True)
        ranks = [order.index(p) for p in phases]
        assert ranks == sorted(ranks)


def test_slack_value():
    assert hac_slack(2, 2, 10_000) == pytest.approx(math.sqrt(4 * math.log(1e4)) / 10, rel=1e-15)
    assert hac_slack(2, 2, 10_000) == pytest.approx(0.6069708517540586, abs=1e-15)
    assert marginal_replacement_threshold(2, 2, 10_000) == 2 * hac_slack(2, 2, 10_000)


def test_fallback_example():
    T = 10_000
    delta = default_delta(T)
    m = np.array([[0.5, 0.5], [0.5, 0.5]])
    st = make_hac_state(m, T)
    s = SufficientStats(2, 2)
    # arm indices 1.2 at 1000 plays; context indices pinned to 0.2 by enormous counts
    s.action_count[:] = 1000
    s.action_sum[:] = (1.2 - radius(1000, delta)) * 1000
    s.context_count[:] = 10**16
    s.context_sum[:] = (0.2 - radius(10**16, delta)) * 10**16
    d = 1.2 - 0.2 + st.slack
    upper = 2 * math.sqrt(math.log(T) / 1000) + 2 * st.slack
    assert d == pytest.approx(1.6069708517540586, abs=1e-12)
    assert upper == pytest.approx(1.4058827, abs=1e-6)
    assert hac_test_failures(st, s).tolist() == [True, True]


def test_no_failure_when_indices_agree():
    T = 10_000
    st = make_hac_state(np.array([[0.5, 0.5], [0.5, 0.5]]), T)
    s = SufficientStats(2, 2)
    s.action_count[:] = 1000
    s.action_sum[:] = 500
    s.context_count[:] = 1000
    s.context_sum[:] = 500
    assert not hac_test_failures(st, s).any()


def test_hac_warns_below_horizon_floor(caplog):
    with caplog.at_level("WARNING"):
        make_hac_state(np.full((10, 2), 0.5), 2000)
    assert "25|A|^2" in caplog.text


def test_tiny_horizon_is_all_exploration():
    env = make_worstcase_env(20, 2)
    inc, pol = run_one(env, "hacucb", 20, 0, return_policy=True)
    assert pol.state.forced_rounds == 40
    assert pol.phase_label() == "Explore1"
    assert len(inc) == 20


def test_replacement_rate_with_exact_marginals():
    curve = run_many(RunConfig(make_benign_env(2, 2500), "hacucb", 2500, 200, 0), workers=1)
    assert curve.diagnostics["replaced"].mean() <= 0.05


# Tie-breaking and determinism -------------------------------------------------------------

def test_ties_go_to_first_action():
    s = SufficientStats(4, 3)
    assert ucb_step(s, 0.01) == 0
    assert cucb_step(s, np.full((4, 3), 1 / 3), 0.01) == 0


def test_cucb_follows_context_indices():
    s = SufficientStats(2, 2)
    s.context_count[:] = 10**16
    s.context_sum[:] = (np.array([0.9, 0.3]) - radius(10**16, 0.05)) * 10**16
    assert cucb_step(s, [[1, 0], [0, 1]], 0.05) == 0
    assert cucb_step(s, [[0, 1], [1, 0]], 0.05) == 1


def test_unseen_arm_beats_confident_arm():
    s = SufficientStats(2, 1)
    for _ in range(10_000):
        s.update(0, 0, 1.0)
    assert ucb_step(s, default_delta(100)) == 1


def test_replay_determinism():
    env = make_worstcase_env(3, 3)
    for name in ("ucb", "cucb", "hacucb", "uniform", "corral"):
        a = run_one(env, name, 500, 42)
        b = run_one(env, name, 500, 42)
        assert np.array_equal(a, b)
    s = SufficientStats(3, 3)
    for a, z, y in [(0, 1, 0.5), (2, 2, 1.0), (1, 0, 0.0)]:
        s.update(a, z, y)
    m = env.marginal
    assert ucb_step(s, 0.01) == ucb_step(s, 0.01)
    assert cucb_step(s, m, 0.01) == cucb_step(s, m, 0.01)


# Baselines ------------------------------------------------------------------------------------

def test_constant_baselines():
    env = make_worstcase_env()
    assert np.all(run_one(env, "const:1", 300, 0) == 0.0)
    inc = run_one(env, "const:2", 240, 0)
    assert np.allclose(inc, 1 / 24, atol=1e-15, rtol=0)
    assert np.cumsum(inc)[-1] == pytest.approx(10.0, abs=1e-12)
    with pytest.raises(DomainError):
        make_policy("const:9", env, 10)


def test_uniform_expected_regret():
    env = make_worstcase_env()
    curve = run_many(RunConfig(env, "uniform", 480, 300, 0), workers=1)
    assert abs(curve.final - 480 / 48) <= 3 * curve.final_se


def test_unknown_policy_name():
    with pytest.raises(ConfigError):
        parse_policy_name("thompson")


# Corral -----------------------------------------------------------------------------------------

def test_corral_rate_formula():
    T, nz = 5000, 2
    lt = math.log(T)
    r = 2 * nz + 6 * math.sqrt(nz * T * lt) + lt * math.sqrt(2 * T)
    assert causal_regret_bound(T, nz) == pytest.approx(r, rel=1e-15)
    assert causal_regret_bound(T, nz) == pytest.approx(2606.7731586650825, rel=1e-14)
    assert corral_learning_rate(T, nz) == pytest.approx(1 / (40 * r * lt), rel=1e-15)
    assert corral_learning_rate(T, nz) == pytest.approx(1.126004872720058e-06, rel=1e-14)


def test_freedman_radius():
    assert freedman_radius(4.0, 100, 8) == pytest.approx(
        math.sqrt(16 * math.log(100) / 8) + 16 * math.log(100) / 24, rel=1e-14)


def test_log_barrier_step():
    p = np.array([0.5, 0.5])
    assert np.allclose(log_barrier_omd(p, [0.3, 0.3], [0.1, 0.1]), p, atol=1e-14)
    q = log_barrier_omd(p, [1.0, 0.0], [0.5, 0.5])
    assert q[0] < 0.5 < q[1]
    assert q.sum() == pytest.approx(1.0, abs=1e-14)
    # first-order condition of the barrier step: 1/q_i = 1/p_i + eta (l_i - lam) for one lam
    lam = 1 / p - 1 / q + 0.5 * np.array([1.0, 0.0])
    assert lam[0] / 0.5 == pytest.approx(lam[1] / 0.5, rel=1e-9)


def test_master_symmetric_losses_keep_uniform():
    m = CorralMaster(p=np.full((3, 2), 0.5), pbar=np.full((3, 2), 0.5), eta=np.full((3, 2), 0.01),
                     rho=np.full((3, 2), 4.0), gamma=1e-3, beta=1.1)
    for t in range(50):
        m.update(np.array([t % 2] * 3), np.zeros(3))
    assert np.allclose(m.p, 0.5, atol=1e-14)


def test_corral_rho_dominates_weights():
    env = make_benign_env(3, 1500)
    pol = Corral(env.marginal, 3, 2, 1500, policy_stream(5))
    s = SufficientStats(3, 2)
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(1500):
        a = pol.select(s)
        z, y = env.draw(a, *rng.random(2))
        s.update(a, z, y)
        pol.observe(a, z, y)
        worst = max(worst, float((1 / pol.master.pbar).max()))
        assert np.all(pol.master.rho >= 1 / pol.master.pbar - 1e-12)
        assert pol.master.pbar.sum() == pytest.approx(1.0, abs=1e-12)
    assert worst > 0


def test_corral_batch_of_one_matches_single():
    env = make_worstcase_env()
    single = run_one(env, "corral", 300, 3)
    curve = run_many(RunConfig(env, "corral", 300, 1, 3), workers=1)
    assert np.array_equal(curve.mean, np.cumsum(single))


def test_hacucb_batch_state_shapes():
    pol = HACUCB(np.full((2, 2), 0.5), 1000, batch=4)
    assert pol.state.flag.shape == (4,)
    assert pol.state.phase.tolist() == [Phase.EXPLORE1] * 4
