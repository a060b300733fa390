import numpy as np
import pytest

from conftest import central_diff, max_rel_error
from infopg.diffkit import tensor as T
from infopg.diffkit.cells import init_mlp, mlp_forward
from infopg.diffkit.tensor import Tape
from infopg.envs.base import CommGraph
from infopg.errors import ContractError, StaleGraphError
from infopg.mi import mi_lower_bound, mi_upper_bound
from infopg.policy import k_level_forward, log_prob, make_bundle
from infopg.rollout import Rows
from infopg.trainers import (
    Transition,
    compute_advantage,
    consensus_average,
    gate_weights,
    make_agent,
    moa_update,
    nc_a2c_update,
    policy_gradient_update,
    team_forward,
    update_team,
)

OBS, NACT, D = 3, 3, 4


def make_rows(obs, actions, rewards, done, graph, next_obs=None):
    obs = np.asarray(obs, dtype=np.float64)
    R, N = obs.shape[:2]
    actions = np.asarray(actions, dtype=np.int64)
    return Rows(
        obs=obs,
        actions=actions,
        executed=actions.copy(),
        rewards=np.asarray(rewards, dtype=np.float64),
        next_obs=obs.copy() if next_obs is None else np.asarray(next_obs, dtype=np.float64),
        done=np.asarray(done, dtype=np.float64),
        returns=np.asarray(rewards, dtype=np.float64),
        map_probs=None,
        noise=None,
        override=None,
        episode=np.zeros(R, dtype=np.int64),
        timestep=np.arange(R),
        graph=graph,
    )


def team(n, seed=0, cell="gru", lr=1e-3, moa_slots=0, optimizer="adam", perturb=0.3):
    rng = np.random.default_rng(seed)
    agents = []
    for i in range(n):
        b = make_bundle(OBS, NACT, D, rng, hidden=5, cell=cell, moa_slots=moa_slots)
        for p in b.actor_params().values():
            p.value = p.value + perturb * rng.standard_normal(p.value.shape)
        agents.append(make_agent(i, b, lr, optimizer))
    return agents


def set_constant_critic(agent, value):
    for p in agent.bundle.critic:
        p.value = np.zeros_like(p.value)
    agent.bundle.critic["b1"].value = np.array([float(value)])


def snapshot(params):
    return {k: p.value.copy() for k, p in params.items()}


def same(a, b):
    return all(a[k].tobytes() == b[k].tobytes() for k in a)


def probs_of(agents, obs, graph, K):
    return [d.probs for _, d in k_level_forward([a.bundle for a in agents], list(obs), graph, K)]


# ---------------------------------------------------------------- advantage


def linear_critic(w=1.0, b=0.0):
    c = init_mlp([1, 1], np.random.default_rng(0))
    c["W0"].value = np.array([[w]])
    c["b0"].value = np.array([b])
    return c


def test_advantage_null_case():
    c = linear_critic()
    est = compute_advantage(c, Transition(0, np.array([0.0]), [], 0, None, 0.0, np.array([0.0]), False), 0.99)
    assert float(est.advantage.value[0]) == 0.0


def test_advantage_hand_arithmetic():
    c = linear_critic()
    est = compute_advantage(c, Transition(0, np.array([2.5]), [], 0, None, 1.0, np.array([2.0]), False), 0.95)
    assert float(est.advantage.value[0]) == pytest.approx(0.4, abs=1e-15)
    assert est.value == 2.5 and est.next_value == 2.0


def test_advantage_terminal_masking():
    c = linear_critic()
    for nxt in (0.0, 7.0, -3.0):
        est = compute_advantage(c, Transition(0, np.array([0.3]), [], 0, None, -1.0, np.array([nxt]), True), 0.9)
        assert float(est.advantage.value[0]) == pytest.approx(-1.3, abs=1e-15)
        assert est.next_value == 0.0


def test_advantage_gamma_range():
    c = linear_critic()
    tr = Transition(0, np.array([0.0]), [], 0, None, 0.0, np.array([0.0]), False)
    for g in (1.0, -0.1):
        with pytest.raises(ContractError):
            compute_advantage(c, tr, g)


def test_advantage_critic_gradient_only_through_current_value():
    c = linear_critic(0.7, 0.1)
    tr = Transition(0, np.array([1.5]), [], 0, None, 0.5, np.array([-2.0]), False)
    with Tape() as tape:
        adv = compute_advantage(c, tr, 0.9).advantage
        loss = T.sum(T.mul(adv, adv))
    g = tape.backward(loss)
    a = 0.5 + 0.9 * (0.7 * -2.0 + 0.1) - (0.7 * 1.5 + 0.1)
    # d(A^2)/dW = 2A * (-o); V(o') is a constant
    assert g[c["W0"]][0, 0] == pytest.approx(2 * a * -1.5, rel=1e-13)
    assert g[c["b0"]][0] == pytest.approx(-2 * a, rel=1e-13)


def test_gate_weights():
    a = np.array([-1.0, 0.0, 2.0])
    np.testing.assert_array_equal(gate_weights(a, "infopg"), [0.0, 0.0, 2.0])
    np.testing.assert_array_equal(gate_weights(a, "adv_infopg"), a)
    with pytest.raises(ContractError):
        gate_weights(a, "ppo")


# ---------------------------------------------------------------- policy-gradient updates


def batch_rows(rng, R=6, n=2):
    obs = rng.standard_normal((R, n, OBS))
    actions = rng.integers(0, NACT, size=(R, n))
    rewards = rng.uniform(-1, 1, size=(R, n))
    return make_rows(obs, actions, rewards, np.ones(R), CommGraph.chain(n))


@pytest.mark.parametrize("cell", ["gru", "vrnn"])
def test_infopg_negative_advantages_freeze_actor(cell, rng):
    agents = team(2, cell=cell)
    for a in agents:
        set_constant_critic(a, 50.0)
    rows = batch_rows(rng)
    actors = [snapshot(a.bundle.actor_params()) for a in agents]
    critics = [snapshot(a.bundle.critic_params()) for a in agents]
    update_team(agents, rows, "infopg", 1, 0.99, 0.75)
    for a, act, cri in zip(agents, actors, critics):
        assert same(act, snapshot(a.bundle.actor_params()))
        assert not same(cri, snapshot(a.bundle.critic_params()))


def test_adv_infopg_negative_advantages_move_actor(rng):
    agents = team(2)
    for a in agents:
        set_constant_critic(a, 50.0)
    rows = batch_rows(rng)
    actors = [snapshot(a.bundle.actor_params()) for a in agents]
    update_team(agents, rows, "adv_infopg", 1, 0.99, 0.75)
    for a, act in zip(agents, actors):
        assert not same(act, snapshot(a.bundle.actor_params()))


@pytest.mark.parametrize("sign", [1.0, -1.0])
@pytest.mark.parametrize("K", [0, 1, 2])
def test_single_transition_moves_taken_action_probability(sign, K, rng):
    agents = team(2, lr=1e-3)
    obs = rng.standard_normal((1, 2, OBS))
    graph = CommGraph.chain(2)
    before = probs_of(agents, obs[0], graph, K)
    actions = np.array([[0, 2]])
    for a in agents:
        set_constant_critic(a, -sign)  # r = 0, done: A = sign
    update_team(agents, make_rows(obs, actions, np.zeros((1, 2)), [1.0], graph), "adv_infopg", K, 0.9, 10.0)
    after = probs_of(agents, obs[0], graph, K)
    for i in range(2):
        delta = after[i][actions[0, i]] - before[i][actions[0, i]]
        assert sign * delta > 0


def test_zero_advantage_zero_actor_gradient(rng):
    agents = team(1)
    set_constant_critic(agents[0], 0.25)
    obs = rng.standard_normal((1, 1, OBS))
    rows = make_rows(obs, [[1]], [[0.25]], [1.0], CommGraph.empty(1))
    tg = team_forward([agents[0].bundle], rows, 0)
    with tg.tape:
        adv = compute_advantage(agents[0].bundle.critic, tg.batches[0], 0.9).advantage
        loss = T.sum(T.mul(tg.batches[0].log_probs, T.Tensor(-adv.value)))
    grads = tg.tape.backward(loss)
    for p in agents[0].bundle.actor_params().values():
        assert not grads.get(p, np.zeros(1)).any()


def test_stale_graph_rejected(rng):
    agents = team(2)
    tg = team_forward([a.bundle for a in agents], batch_rows(rng), 1)
    tg.tape.release()
    with pytest.raises(StaleGraphError):
        policy_gradient_update(agents[0], tg.batches[0], "adv_infopg", 0.9, 1.0)


def test_batch_agent_mismatch(rng):
    agents = team(2)
    tg = team_forward([a.bundle for a in agents], batch_rows(rng), 1)
    with pytest.raises(ContractError):
        policy_gradient_update(agents[0], tg.batches[1], "adv_infopg", 0.9, 1.0)


def test_update_team_releases_graph(rng):
    agents = team(2)
    rows = batch_rows(rng)
    tg = team_forward([a.bundle for a in agents], rows, 1)
    tg.tape.release()
    update_team(agents, rows, "adv_infopg", 1, 0.9, 1.0)
    with pytest.raises(ContractError):
        update_team(agents, rows, "sarsa", 1, 0.9, 1.0)


def test_actor_loss_gradient_matches_finite_differences(rng):
    agents = team(2, perturb=0.3)
    rows = batch_rows(rng, R=4)
    bundles = [a.bundle for a in agents]
    adv_w = rng.standard_normal(4)

    def loss():
        out = k_level_forward(bundles, [rows.obs[:, i] for i in range(2)], rows.graph, 1)
        return T.sum(T.mul(log_prob(out[0][1], rows.actions[:, 0]), T.Tensor(-adv_w)))

    with Tape() as tape:
        root = loss()
    grads = tape.backward(root)
    for p in list(bundles[0].actor_params().values()) + [bundles[1].encoder["W1"]]:
        fd = central_diff(lambda: float(loss().value), p.value)
        assert max_rel_error(grads[p], fd) < 1e-4


def test_infopg_gate_never_pushes_logprob_down():
    # single-transition batches: the applied step has non-negative inner product with grad log pi
    for seed in range(20):
        r = np.random.default_rng(seed)
        agents = team(2, seed=seed)
        for a in agents:
            set_constant_critic(a, r.uniform(-2, 2))
        obs = r.standard_normal((1, 2, OBS))
        actions = r.integers(0, NACT, size=(1, 2))
        rows = make_rows(obs, actions, r.uniform(-1, 1, (1, 2)), [1.0], CommGraph.chain(2))
        tg = team_forward([a.bundle for a in agents], rows, 1)
        with tg.tape:
            root = T.sum(tg.batches[0].log_probs)
        g = tg.tape.backward(root)
        tg.tape.release()
        before = snapshot(agents[0].bundle.actor_params())
        update_team(agents, rows, "infopg", 1, 0.9, 0.75)
        after = agents[0].bundle.actor_params()
        dot = sum(float((g.get(p, 0.0) * (p.value - before[k])).sum()) for k, p in after.items())
        assert dot >= -1e-15


@pytest.mark.parametrize("n_act", [2, 3])
def test_positive_advantage_on_map_action_raises_lower_bound(n_act):
    rng = np.random.default_rng(4)
    agents = []
    for i in range(2):
        b = make_bundle(OBS, n_act, D, rng, hidden=5)
        agents.append(make_agent(i, b, 1e-3))
    graph = CommGraph.chain(2)
    obs = rng.standard_normal((1, 2, OBS))
    # bias the head so the MAP probability sits above 1/e where p log p is increasing
    for a in agents:
        a.bundle.head["b0"].value = np.linspace(1.5, 0.0, n_act)
        set_constant_critic(a, -1.0)
    before = probs_of(agents, obs[0], graph, 1)
    map_a = np.array([[int(np.argmax(p)) for p in before]])
    p0 = max(before[0])
    assert p0 > 1 / np.e
    update_team(agents, make_rows(obs, map_a, np.zeros((1, 2)), [1.0], graph), "infopg", 1, 0.9, 10.0)
    p1 = max(probs_of(agents, obs[0], graph, 1)[0])
    assert mi_lower_bound(p1) > mi_lower_bound(p0)


def test_negative_advantage_on_map_action_lowers_upper_bound():
    rng = np.random.default_rng(8)
    agents = team(2, seed=8)
    graph = CommGraph.chain(2)
    obs = rng.standard_normal((1, 2, OBS))
    for a in agents:
        set_constant_critic(a, 1.0)
    before = probs_of(agents, obs[0], graph, 1)
    map_a = np.array([[int(np.argmax(p)) for p in before]])
    update_team(agents, make_rows(obs, map_a, np.zeros((1, 2)), [1.0], graph), "adv_infopg", 1, 0.9, 10.0)
    after = probs_of(agents, obs[0], graph, 1)
    assert mi_upper_bound(max(after[0]), NACT) <= mi_upper_bound(max(before[0]), NACT)


def test_terminal_next_observation_irrelevant(rng):
    obs = rng.standard_normal((3, 2, OBS))
    acts = rng.integers(0, NACT, (3, 2))
    rew = rng.standard_normal((3, 2))
    results = []
    for nxt in (obs, obs + 10.0):
        agents = team(2, seed=1)
        rows = make_rows(obs, acts, rew, np.ones(3), CommGraph.chain(2), next_obs=nxt)
        update_team(agents, rows, "adv_infopg", 1, 0.9, 1.0)
        results.append([snapshot(a.bundle.all_params()) for a in agents])
    for a, b in zip(*results):
        assert same(a, b)


# ---------------------------------------------------------------- NC-A2C


def test_nc_a2c_equals_adv_infopg_without_edges(rng):
    rows_obs = rng.standard_normal((5, 2, OBS))
    acts = rng.integers(0, NACT, (5, 2))
    rew = rng.standard_normal((5, 2))
    done = np.zeros(5)
    done[-1] = 1
    empty = CommGraph.empty(2)
    nc = team(2, seed=3, cell=None)
    adv = team(2, seed=3, cell=None)
    update_team(nc, make_rows(rows_obs, acts, rew, done, empty), "nc_a2c", 0, 0.9, 1.0)
    update_team(adv, make_rows(rows_obs, acts, rew, done, empty), "adv_infopg", 0, 0.9, 1.0)
    for a, b in zip(nc, adv):
        assert same(snapshot(a.bundle.all_params()), snapshot(b.bundle.all_params()))


def test_nc_a2c_rejects_communicative_cell(rng):
    agents = team(2)
    tg = team_forward([a.bundle for a in agents], batch_rows(rng), 0)
    with pytest.raises(ContractError):
        nc_a2c_update(agents[0], tg.batches[0], 0.9, 1.0)


# ---------------------------------------------------------------- consensus


def test_consensus_identical_fixed_point():
    agents = team(3, cell=None, perturb=0.0)
    ref = snapshot(agents[0].bundle.actor_params())
    for a in agents[1:]:
        a.bundle.load({**ref, **snapshot(a.bundle.critic_params())})
    consensus_average(agents, CommGraph.chain(3))
    for a in agents:
        for k, v in a.bundle.actor_params().items():
            np.testing.assert_array_equal(v.value, ref[k])


def test_consensus_pairwise_mean():
    agents = team(2, cell=None)
    p, q = (snapshot(a.bundle.actor_params()) for a in agents)
    critic = snapshot(agents[0].bundle.critic_params())
    consensus_average(agents, CommGraph.chain(2))
    for a in agents:
        for k, v in a.bundle.actor_params().items():
            np.testing.assert_allclose(v.value, (p[k] + q[k]) / 2, rtol=1e-15)
    assert same(critic, snapshot(agents[0].bundle.critic_params()))


def test_consensus_empty_graph_noop():
    agents = team(3, cell=None)
    before = [snapshot(a.bundle.actor_params()) for a in agents]
    consensus_average(agents, CommGraph.empty(3))
    for a, b in zip(agents, before):
        assert same(b, snapshot(a.bundle.actor_params()))


def test_consensus_excludes_frozen_agent():
    agents = team(3, cell=None)
    agents[1].frozen = True
    frozen = snapshot(agents[1].bundle.actor_params())
    p0, p2 = snapshot(agents[0].bundle.actor_params()), snapshot(agents[2].bundle.actor_params())
    consensus_average(agents, CommGraph.chain(3))
    assert same(frozen, snapshot(agents[1].bundle.actor_params()))
    assert same(p0, snapshot(agents[0].bundle.actor_params()))
    assert same(p2, snapshot(agents[2].bundle.actor_params()))


def test_consensus_shape_mismatch():
    rng = np.random.default_rng(0)
    agents = [make_agent(0, make_bundle(OBS, NACT, D, rng, cell=None), 1e-3), make_agent(1, make_bundle(OBS, NACT, D + 1, rng, cell=None), 1e-3)]
    with pytest.raises(ContractError):
        consensus_average(agents, CommGraph.chain(2))


def test_cu_update_runs_consensus(rng):
    agents = team(2, cell=None)
    update_team(agents, batch_rows(rng), "cu", 0, 0.9, 1.0)
    a, b = (snapshot(x.bundle.actor_params()) for x in agents)
    assert same(a, b)


# ---------------------------------------------------------------- MOA


def test_moa_beta_zero_matches_nc_a2c(rng):
    rows = batch_rows(rng)
    moa = team(2, seed=5, cell=None, moa_slots=1)
    nc = team(2, seed=5, cell=None)
    for m, n in zip(moa, nc):
        n.bundle.load({k: v for k, v in snapshot(m.bundle.all_params()).items() if not k.startswith("moa.")})
    update_team(moa, rows, "moa", 0, 0.9, 1e6, beta=0.0)
    update_team(nc, rows, "nc_a2c", 0, 0.9, 1e6)
    for m, n in zip(moa, nc):
        mp = snapshot(m.bundle.all_params())
        for k, v in snapshot(n.bundle.all_params()).items():
            assert mp[k].tobytes() == v.tobytes(), k


def test_moa_one_hot_prediction_zero_aux_loss(rng):
    agents = team(2, cell=None, moa_slots=1)
    rows = batch_rows(rng, R=1)
    for i, a in enumerate(agents):
        a.bundle.moa["W0"].value = np.zeros_like(a.bundle.moa["W0"].value)
        b = np.full(NACT, -100.0)
        b[rows.executed[0, 1 - i]] = 100.0
        a.bundle.moa["b0"].value = b
    stats = update_team(agents, rows, "moa", 0, 0.9, 1.0, beta=1.0)
    assert all(s["moa_loss"] == pytest.approx(0.0, abs=1e-12) for s in stats)


def test_moa_beta_changes_update_and_aux_gradient_checks(rng):
    rows = batch_rows(rng)
    outs = []
    for beta in (0.0, 1.0):
        agents = team(2, seed=6, cell=None, moa_slots=1, optimizer="sgd")
        update_team(agents, rows, "moa", 0, 0.9, 1e6, beta=beta)
        outs.append(snapshot(agents[0].bundle.actor_params()))
    assert not same(outs[0], outs[1])
    # auxiliary cross-entropy gradient against finite differences
    b = team(1, seed=6, cell=None, moa_slots=1)[0].bundle
    obs = rows.obs[:, 0]
    target = rows.executed[:, 1]


    def ce():
        lat = k_level_forward([b], [obs], CommGraph.empty(1), 0)[0][0][-1].vector
        return T.scale(T.sum(T.pick(T.log_softmax(mlp_forward(b.moa, lat)), target)), -1.0)

    with Tape() as tape:
        root = ce()
    grads = tape.backward(root)
    for p in (b.moa["W0"], b.encoder["W1"]):
        assert np.abs(grads[p]).max() > 0
        assert max_rel_error(grads[p], central_diff(lambda: float(ce().value), p.value)) < 1e-4


def test_moa_errors(rng):
    agents = team(2, cell=None, moa_slots=1)
    tg = team_forward([a.bundle for a in agents], batch_rows(rng), 0)
    with pytest.raises(ContractError):
        moa_update(agents[0], tg.batches[0], None, 1.0, 0.9, 1.0)
    plain = team(2, cell=None)
    tg2 = team_forward([a.bundle for a in plain], batch_rows(rng), 0)
    with pytest.raises(ContractError):
        moa_update(plain[0], tg2.batches[0], tg2.batches[0].neighbor_actions, 1.0, 0.9, 1.0)


# ---------------------------------------------------------------- frozen agents


def test_frozen_agent_never_updates(rng):
    agents = team(3)
    agents[1].frozen = True
    before = snapshot(agents[1].bundle.all_params())
    for algo, K in (("infopg", 1), ("adv_infopg", 2)):
        update_team(agents, batch_rows(rng, n=3), algo, K, 0.9, 1.0)
    assert same(before, snapshot(agents[1].bundle.all_params()))
