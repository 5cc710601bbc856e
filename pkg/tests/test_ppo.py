import csv
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from npmo import ppo
from npmo.imitation import ScenarioConfig
from npmo.policy_net import NetConfig, backward, forward_batch, init_params, masked_log_softmax

TINY = NetConfig(M=6, n_max=2, conv_channels=(4, 4), hidden=16)
ENV = ScenarioConfig((1, 2), 6, 3)


def batch_from(rewards, values, dones, last=0.0):
    r = np.asarray(rewards, float)[:, None]
    return ppo.RolloutBatch(None, None, None, None, None, r, np.asarray(values, float)[:, None],
                            np.asarray(dones, bool)[:, None], np.array([last], float))


def test_gae_hand_computation():
    b = batch_from([-1, -1, 50], [0, 0, 0], [False, False, True])
    adv, target = ppo.compute_advantages(b, 0.9, 1.0, normalize=False)
    assert np.isclose(adv[0, 0], -1 - 0.9 + 0.81 * 50)        # 38.6
    assert np.isclose(adv[0, 0], 38.6)
    assert np.allclose(adv[:, 0], [38.6, 44.0, 50.0])
    assert np.allclose(target, adv)


def test_gae_lambda_zero_is_td():
    r, v = [1.0, 2.0, 3.0], [0.5, -1.0, 2.0]
    b = batch_from(r, v, [False, False, False], last=4.0)
    adv, _ = ppo.compute_advantages(b, 0.9, 0.0, normalize=False)
    nxt = [-1.0, 2.0, 4.0]
    assert np.allclose(adv[:, 0], [r[t] + 0.9 * nxt[t] - v[t] for t in range(3)])


def test_gae_exact_values_give_zero():
    r = [-1.0, -1.0, 50.0]
    v = [r[0] + 0.9 * r[1] + 0.81 * r[2], r[1] + 0.9 * r[2], r[2]]
    adv, _ = ppo.compute_advantages(batch_from(r, v, [False, False, True]), 0.9, 1.0, normalize=False)
    assert np.allclose(adv, 0)


def test_advantage_normalisation_and_single_sample():
    b = batch_from([1.0, 0.0, 5.0], [0, 0, 0], [True, True, True])
    adv, _ = ppo.compute_advantages(b, 0.9, 0.95)
    assert np.isclose(adv.mean(), 0) and np.isclose(adv.std(), 1, atol=1e-6)
    adv1, _ = ppo.compute_advantages(batch_from([3.0], [0.0], [True]), 0.9, 0.95)
    assert adv1[0, 0] == 3.0


def test_clip_substitution():
    surr, _ = ppo.clipped_surrogate(np.array([1.5]), np.array([2.0]), 0.2)
    assert np.isclose(surr[0], 1.2 * 2.0)


@given(st.floats(0.01, 5), st.floats(-10, 10), st.floats(0.05, 0.5))
def test_clip_bound(r, a, eps):
    surr, _ = ppo.clipped_surrogate(np.array([r]), np.array([a]), eps)
    clipped = np.clip(r, 1 - eps, 1 + eps) * a
    assert surr[0] <= r * a + 1e-12 and surr[0] <= clipped + 1e-12


def _loss_inputs(seed=0):
    batch = ppo.collect_rollouts(init_params(seed, TINY), ENV, horizon=6, n_envs=2, seed=seed)
    params = init_params(seed, TINY)
    logits, values, cache = forward_batch(params, batch.flat("obs"), batch.flat("aux"))
    return batch, params, logits, values, cache


def test_ratio_one_gives_mean_advantage():
    batch, params, logits, values, _ = _loss_inputs()
    rows = np.arange(len(batch))
    masks, acts = batch.flat("masks"), batch.flat("actions")
    old = masked_log_softmax(logits, masks)[rows, acts]
    adv = np.random.default_rng(0).normal(size=len(batch))
    _, _, _, stats = ppo.ppo_loss(logits, values, masks, acts, old, adv, np.zeros(len(batch)), ppo.PpoConfig())
    assert np.isclose(stats["surrogate"], adv.mean()) and stats["clip_frac"] == 0 and np.isclose(stats["ratio"], 1)


def test_entropy_uniform():
    masks = np.array([[True, True, False, True]])
    cfg = ppo.PpoConfig()
    _, _, _, stats = ppo.ppo_loss(np.zeros((1, 4)), np.zeros(1), masks, np.array([0]), np.log([1 / 3]),
                                  np.zeros(1), np.zeros(1), cfg)
    assert np.isclose(stats["entropy"], np.log(3))


def test_reinforce_equivalence():
    batch, params, logits, values, cache = _loss_inputs(1)
    rows = np.arange(len(batch))
    masks, acts = batch.flat("masks"), batch.flat("actions")
    logp = masked_log_softmax(logits, masks)
    adv = np.random.default_rng(1).normal(size=len(batch))
    cfg = SimpleNamespace(clip=1e9, c1=0.0, c2=0.0, value_scale=1.0)
    _, dlogits, dvalues, _ = ppo.ppo_loss(logits, values, masks, acts, logp[rows, acts], adv,
                                          np.zeros(len(batch)), cfg)
    g_ppo = backward(params, cache, dlogits, dvalues)
    # hand-rolled REINFORCE: ascend mean(A * grad log pi(a|s))
    p = np.where(masks, np.exp(logp), 0.0)
    onehot = np.zeros_like(p)
    onehot[rows, acts] = 1
    d_reinforce = -(adv[:, None] * (onehot - p)) / len(batch)
    g_ref = backward(params, cache, d_reinforce, np.zeros(len(batch)))
    assert np.allclose(g_ppo, g_ref, atol=1e-12)


def test_ppo_loss_gradient_matches_finite_differences():
    batch, params, logits, values, _ = _loss_inputs(2)
    rows = np.arange(len(batch))
    masks, acts = batch.flat("masks"), batch.flat("actions")
    old = masked_log_softmax(logits, masks)[rows, acts] + np.random.default_rng(0).normal(0, 0.1, len(batch))
    adv = np.random.default_rng(3).normal(size=len(batch))
    tgt = np.random.default_rng(4).normal(size=len(batch)) * 10
    cfg = ppo.PpoConfig()
    loss, dl, dv, _ = ppo.ppo_loss(logits, values, masks, acts, old, adv, tgt, cfg)
    h = 1e-6
    for (i, j) in [(0, int(np.flatnonzero(masks[0])[0])), (3, int(np.flatnonzero(masks[3])[-1]))]:
        lg = logits.copy()
        lg[i, j] += h
        lp = ppo.ppo_loss(lg, values, masks, acts, old, adv, tgt, cfg)[0]
        lg[i, j] -= 2 * h
        lm = ppo.ppo_loss(lg, values, masks, acts, old, adv, tgt, cfg)[0]
        assert np.isclose((lp - lm) / (2 * h), dl[i, j], atol=1e-6)
    v = values.copy()
    v[1] += h
    lp = ppo.ppo_loss(logits, v, masks, acts, old, adv, tgt, cfg)[0]
    v[1] -= 2 * h
    lm = ppo.ppo_loss(logits, v, masks, acts, old, adv, tgt, cfg)[0]
    assert np.isclose((lp - lm) / (2 * h), dv[1], atol=1e-6)


def test_rollouts_single_record_and_deterministic():
    p = init_params(0, TINY)
    b = ppo.collect_rollouts(p, ENV, horizon=1, n_envs=1, seed=0)
    assert len(b) == 1 and np.isfinite(b.logp).all()
    b1 = ppo.collect_rollouts(p, ENV, horizon=10, n_envs=3, seed=7)
    b2 = ppo.collect_rollouts(p, ENV, horizon=10, n_envs=3, seed=7)
    for name in ("obs", "aux", "actions", "logp", "rewards", "values", "dones"):
        assert np.array_equal(getattr(b1, name), getattr(b2, name))
    with pytest.raises(ValueError):
        ppo.collect_rollouts(p, ENV, horizon=0, n_envs=1, seed=0)


def test_rollout_rewards_match_replay():
    from npmo import gridworld as gw
    from npmo.geometry import PrimitiveAction
    b = ppo.collect_rollouts(init_params(0, TINY), ENV, horizon=30, n_envs=2, seed=1)
    assert b.episodes
    for ep in b.episodes:
        _, outs = gw.replay(ep["scenario"], [PrimitiveAction.from_index(a) for a in ep["actions"]])
        assert [o.reward for o in outs] == ep["rewards"]


def test_non_finite_loss_restores_params():
    p = init_params(0, TINY)
    b = ppo.collect_rollouts(p, ENV, horizon=4, n_envs=2, seed=0)
    b.rewards[0, 0] = np.nan
    before = p.flat.copy()
    with pytest.raises(ppo.NonFiniteLoss):
        ppo.ppo_update(p, b, ppo.PpoConfig())
    assert np.array_equal(p.flat, before)


def test_update_reports_stats_and_stays_finite():
    p = init_params(0, TINY)
    b = ppo.collect_rollouts(p, ENV, horizon=8, n_envs=4, seed=0)
    p, stats = ppo.ppo_update(p, b, ppo.PpoConfig())
    assert set(stats) >= {"ratio", "clip_frac", "value_loss", "entropy"}
    assert np.isfinite(p.flat).all() and stats["entropy"] >= 0


def test_bandit_learns_best_arm():
    # one decision per episode: arm 0 pays 1, the others 0
    rng = np.random.default_rng(0)
    cfg = NetConfig(M=6, n_max=1, conv_channels=(2, 2), hidden=4)
    params = init_params(0, cfg)
    from npmo.policy_net import Adam, masked_distribution
    pc = ppo.PpoConfig(learning_rate=0.05, epochs=4, minibatch=16, max_grad_norm=0, value_scale=1.0)
    opt = Adam(params.size, lr=pc.learning_rate)
    obs = np.zeros((16, 6, 6, 3), np.uint8)
    obs[:, 0, 0, 0] = 1
    obs[:, 5, 5, 1] = 1
    aux = np.zeros((16, cfg.aux_dim))
    masks = np.ones((16, 5), bool)
    prob = 0.0
    for update in range(200):
        logits, values, _ = forward_batch(params, obs, aux)
        dists = [masked_distribution(l, m) for l, m in zip(logits, masks)]
        acts = np.array([d.sample(rng) for d in dists])
        b = ppo.RolloutBatch(obs[:, None], aux[:, None], masks[:, None], acts[:, None],
                             np.array([d.log_prob(a) for d, a in zip(dists, acts)])[:, None],
                             (acts == 0).astype(float)[:, None], values[:, None], np.ones((16, 1), bool),
                             np.zeros(1))
        ppo.ppo_update(params, b, pc, opt, rng)
        prob = masked_distribution(forward_batch(params, obs[:1], aux[:1])[0][0], masks[0]).probs[0]
        if prob > 0.95:
            break
    assert prob > 0.95


def test_train_zero_iterations_returns_initial():
    p = init_params(0, TINY)
    best, curve = ppo.train(p, ppo.PpoConfig(iterations=0, env=ENV))
    assert np.array_equal(best.flat, p.flat) and curve == []


def test_train_curve_and_csv(tmp_path):
    from npmo import bench
    p = init_params(0, TINY)
    cfg = ppo.PpoConfig(iterations=3, n_envs=2, horizon=8, env=ENV)
    suite = bench.make_suite(1, 4, 0, M=6, n_immovable=3)
    best, curve = ppo.train(p, cfg, suite, eval_every=1)
    assert [r["iteration"] for r in curve] == [0, 1, 2, 3]
    ppo.write_curve(curve, tmp_path / "c.csv")
    with open(tmp_path / "c.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["eval_success"]) for r in rows] == pytest.approx([r["eval_success"] for r in curve], rel=1e-5)
    best2, curve2 = ppo.train(p, cfg, suite, eval_every=1)
    assert np.array_equal(best.flat, best2.flat)
    ppo.write_curve(curve2, tmp_path / "c2.csv")
    assert (tmp_path / "c.csv").read_bytes() == (tmp_path / "c2.csv").read_bytes()


def test_iterations_to_threshold():
    nan = float("nan")
    curve = [{"iteration": 0, "eval_success": 0.5}, {"iteration": 1, "eval_success": nan},
             {"iteration": 2, "eval_success": 0.95}]
    assert ppo.iterations_to_threshold(curve, 0.9) == 2
    assert ppo.iterations_to_threshold(curve, 0.99) is None


def test_config_validation_and_roundtrip():
    for bad in ({"clip": 0}, {"clip": 1.0}, {"gamma": 0}, {"lam": 1.5}):
        with pytest.raises(ValueError):
            ppo.PpoConfig(**bad)
    cfg = ppo.PpoConfig(iterations=7, env=ScenarioConfig((3, 5), 10, 4))
    assert ppo.config_from_dict(ppo.config_to_dict(cfg)) == cfg
    big = ppo.PpoConfig.paper_scale()
    assert big.iterations == 8000 and big.n_envs == 28 and big.learning_rate == 2e-4
    assert (big.clip, big.c1, big.c2) == (0.2, 0.5, 0.001)
