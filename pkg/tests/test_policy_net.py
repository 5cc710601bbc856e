import numpy as np
import pytest

from npmo import gridworld as gw
from npmo.agents import flat_mask, state_inputs
from npmo.policy_net import (Adam, NetConfig, NoLegalAction, PolicyParams, ShapeMismatch, forward, forward_batch,
                             init_params, load_params, loss_gradients, make_aux, masked_distribution, save_params)

TINY = NetConfig(M=6, n_max=2, conv_channels=(3, 4), hidden=8)


def tiny_batch(seed=0, count=3, config=TINY):
    obs, aux, masks = [], [], []
    for k in range(count):
        sc = gw.random_scenario(1 + k % config.n_max, config.M, seed + k, 3)
        s = gw.initial_state(sc)
        o, x = state_inputs(s, config.n_max)
        obs.append(o)
        aux.append(x)
        masks.append(flat_mask(s, config.n_max))
    return np.array(obs), np.array(aux), np.array(masks)


def smooth_loss(logits, values):
    w = np.linspace(-1, 1, logits.size).reshape(logits.shape)
    loss = float((w * logits).sum() + 0.5 * (logits ** 2).sum() + (values ** 2).sum())
    return loss, w + logits, 2 * values


@pytest.mark.parametrize("trunk", ["conv", "fc"])
def test_gradient_check(trunk):
    cfg = NetConfig(M=6, n_max=2, trunk=trunk, conv_channels=(3, 4), fc_width=5, hidden=8)
    params = init_params(3, cfg)
    obs, aux, _ = tiny_batch(config=cfg)
    _, grad = loss_gradients(params, obs, aux, smooth_loss)
    rng = np.random.default_rng(0)
    h = 1e-4
    num, ana = [], []
    for j in rng.choice(params.size, 50, replace=False):
        old = params.flat[j]
        params.flat[j] = old + h
        lp, _ = loss_gradients(params, obs, aux, smooth_loss)
        params.flat[j] = old - h
        lm, _ = loss_gradients(params, obs, aux, smooth_loss)
        params.flat[j] = old
        num.append((lp - lm) / (2 * h))
        ana.append(grad[j])
    num, ana = np.array(num), np.array(ana)
    rel = np.linalg.norm(num - ana) / max(np.linalg.norm(num) + np.linalg.norm(ana), 1e-12)
    assert rel < 1e-4


def test_init_deterministic():
    assert np.array_equal(init_params(5, TINY).flat, init_params(5, TINY).flat)
    assert not np.array_equal(init_params(5, TINY).flat, init_params(6, TINY).flat)


def test_zero_params_give_zero_outputs():
    obs, aux, _ = tiny_batch()
    logits, value = forward(PolicyParams(TINY), obs[0], aux[0])
    assert not logits.any() and value == 0.0


def test_empty_slot_channels_are_ignored():
    params = init_params(1, TINY)
    sc = gw.random_scenario(1, 6, 4)
    obs, aux = state_inputs(gw.initial_state(sc), 2)
    noisy = obs.copy()
    noisy[:, :, 3] = 1      # target plane of the empty slot 1
    a, va = forward(params, obs, aux)
    b, vb = forward(params, noisy, aux)
    assert np.array_equal(a, b) and va == vb
    assert not a[5:].any()


def test_forward_shape_mismatch():
    params = init_params(0, TINY)
    with pytest.raises(ShapeMismatch):
        forward(params, np.zeros((5, 5, 5)), np.zeros(TINY.aux_dim))


def test_forward_is_pure():
    params = init_params(2, TINY)
    obs, aux, _ = tiny_batch()
    a = forward_batch(params, obs, aux)[:2]
    b = forward_batch(params, obs, aux)[:2]
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    # batch and single forward agree
    single = forward(params, obs[1], aux[1])
    assert np.allclose(single[0], a[0][1]) and np.isclose(single[1], a[1][1])


def test_masked_distribution_uniform():
    mask = np.array([True, False, True, True, False])
    d = masked_distribution(np.zeros(5), mask)
    assert np.allclose(d.probs[mask], 1 / 3) and not d.probs[~mask].any()
    assert np.isclose(d.entropy(), np.log(3))


def test_masked_distribution_single_and_empty():
    d = masked_distribution(np.array([3.0, -1.0]), np.array([False, True]))
    assert d.probs[1] == 1.0 and d.entropy() == 0.0 and d.log_prob(1) == 0.0
    with pytest.raises(NoLegalAction):
        masked_distribution(np.zeros(2), np.zeros(2, bool))


def test_distribution_normalised_on_random_states():
    params = init_params(0)
    rng = np.random.default_rng(0)
    for seed in range(10):
        s = gw.initial_state(gw.random_scenario(int(rng.integers(1, 10)), 10, seed, 10))
        o, x = state_inputs(s, 20)
        logits, _ = forward(params, o, x)
        m = flat_mask(s, 20)
        d = masked_distribution(logits, m)
        assert abs(d.probs.sum() - 1) < 1e-9 and not d.probs[~m].any()


def test_constant_loss_zero_gradient():
    params = init_params(0, TINY)
    obs, aux, _ = tiny_batch()
    _, g = loss_gradients(params, obs, aux,
                          lambda l, v: (1.0, np.zeros_like(l), np.zeros_like(v)))
    assert not g.any()


def test_gradient_step_decreases_loss():
    params = init_params(0, TINY)
    obs, aux, _ = tiny_batch()
    l0, g = loss_gradients(params, obs, aux, smooth_loss)
    params.flat -= 1e-3 * g
    l1, _ = loss_gradients(params, obs, aux, smooth_loss)
    assert l1 < l0


def test_adam_minimises_quadratic():
    p = PolicyParams(TINY, np.ones(PolicyParams(TINY).size))
    opt = Adam(p.size, lr=0.05)
    for _ in range(300):
        opt.step(p, 2 * p.flat)
    assert np.abs(p.flat).max() < 0.05


def test_checkpoint_roundtrip(tmp_path):
    params = init_params(9, TINY)
    save_params(params, tmp_path / "p.npz")
    back = load_params(tmp_path / "p.npz")
    assert back.config == TINY and np.array_equal(back.flat, params.flat)


def test_make_aux_layout():
    aux = make_aux(np.array([True, False]), 7, 3, np.array([[2, -1, 0, 0, 4], [1, 1, 1, 1, 1]]),
                   np.array([0, 1]), M=5)
    n = 3
    assert aux[:n].tolist() == [1, 0, 0]
    assert aux[n + 7] == 1 and aux[n:n + 15].sum() == 1
    lens = aux[n * 6:n * 11].reshape(n, 5)
    assert lens[0].tolist() == [0.2, 0.0, 0.0, 0.0, 0.4]
    assert aux[n * 11:].tolist() == [0, 1, 0]
