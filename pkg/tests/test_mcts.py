import math

import numpy as np
import pytest

from npmo import gridworld as gw, mcts
from npmo.agents import UniformGuide
from npmo.geometry import PrimitiveAction, PrimitiveKind as K
from npmo.policy_net import ActionDistribution, NoLegalAction

from conftest import layout


def scripted_guide(sequence, n_max=gw.N_MAX):
    """Puts all mass on ``sequence[t]`` at time ``t``."""
    def guide(state):
        p = np.zeros(n_max * 5)
        p[sequence[state.t].index] = 1.0
        return ActionDistribution(p, p > 0)
    return guide


def hand_node(state, N, V, reward=0.0, children=(), action=None):
    node = mcts.SearchNode(state, action=action, reward=reward)
    node.N, node.V = N, V
    for c in children:
        c.parent = node
        node.children[c.action] = c
    if children:
        node.untried = []
    return node


@pytest.fixture
def open_state():
    return gw.initial_state(layout(6, [(1, 1), (4, 4)], [(1, 4), (4, 0)]))


def test_select_root_without_children(open_state):
    root = mcts.SearchNode(open_state)
    assert mcts.select(root, mcts.SearchConfig()) is root


def test_select_tie_prefers_lower_action(open_state):
    kids = [hand_node(open_state, 2, 1.0, -1.0, action=a) for a in (7, 3)]
    root = hand_node(open_state, 4, 0.0, children=kids)
    assert mcts.select(root, mcts.SearchConfig()).action == 3


def test_select_three_level_hand_tree(open_state):
    cfg = mcts.SearchConfig(c=3.0, gamma=0.9)
    leaf2 = mcts.SearchNode(open_state, action=2, reward=-1.0)
    leaf2.N, leaf2.V = 1, 0.0
    a3 = hand_node(open_state, 5, 3.0, -1.0, action=3)
    a3.untried = [0]
    a0 = hand_node(open_state, 6, 2.0, -1.0, children=[leaf2, a3], action=0)
    a1 = hand_node(open_state, 4, 1.0, -1.0, action=1)
    a1.untried = [0]
    root = hand_node(open_state, 10, 0.0, children=[a0, a1])
    # level 1: Q = 0.8 and -0.1 -> normalised 1 and 0
    s0 = 1.0 + 3.0 * math.sqrt(math.log(10) / 7)      # 2.7206
    s1 = 0.0 + 3.0 * math.sqrt(math.log(10) / 5)      # 2.0358
    assert s0 > s1
    # level 2: Q = -1 and 1.7 -> normalised 0 and 1
    s2 = 0.0 + 3.0 * math.sqrt(math.log(6) / 2)       # 2.8394
    s3 = 1.0 + 3.0 * math.sqrt(math.log(6) / 6)       # 2.6394
    assert s2 > s3
    assert np.isclose(mcts.selection_score(a0, root, cfg, -0.1, 0.8), s0)
    assert np.isclose(mcts.selection_score(leaf2, a0, cfg, -1.0, 1.7), s2)
    assert mcts.select(root, cfg) is leaf2


def test_paper_literal_ignores_values_and_c(open_state):
    kids = [hand_node(open_state, 3, v, -1.0, action=a) for a, v in ((0, -5.0), (1, 9.0), (2, 0.0))]
    root = hand_node(open_state, 9, 0.0, children=kids)
    picks = {mcts.select(root, mcts.SearchConfig(c=c, selection="paper-literal")).action for c in (0.1, 1, 50)}
    assert picks == {0}
    assert mcts.select(root, mcts.SearchConfig(c=0.1)).action == 1


def test_expand_single_action():
    # only (0, down) is a candidate: walls left/up/right, target sealed off
    s = gw.initial_state(layout(5, [(1, 0)], [(4, 4)], walls=[(0, 0), (2, 0), (3, 4), (4, 3)]))
    root = mcts.SearchNode(s)
    assert root.untried == [PrimitiveAction(0, K.DOWN).index]
    child = mcts.expand(root, UniformGuide(), np.random.default_rng(0))
    assert child.action == PrimitiveAction(0, K.DOWN).index
    with pytest.raises(mcts.FullyExpanded):
        mcts.expand(root, UniformGuide(), np.random.default_rng(0))


def test_expand_no_duplicates_and_replay(open_state):
    root = mcts.SearchNode(open_state)
    n = len(root.untried)
    rng = np.random.default_rng(0)
    for _ in range(n):
        c = mcts.expand(root, UniformGuide(), rng)
        ref, out = gw.step(open_state, PrimitiveAction.from_index(c.action))
        assert np.array_equal(c.state.poses, ref.poses) and c.reward == out.reward
    assert len(root.children) == n and not root.untried


def test_simulate_terminal_is_zero():
    s = gw.initial_state(layout(4, [(1, 1)], [(1, 1)]))
    assert mcts.simulate(mcts.SearchNode(s), UniformGuide(), 0.9, None, np.random.default_rng(0)) == 0.0


def test_simulate_hand_rollout():
    sc = layout(6, [(2, 2)], [(5, 5)])
    seq = [PrimitiveAction(0, K.UP), PrimitiveAction(0, K.LEFT), PrimitiveAction(0, K.ASTAR)]
    node = mcts.SearchNode(gw.initial_state(sc))
    v = mcts.simulate(node, scripted_guide(seq), 0.9, None, np.random.default_rng(0))
    assert np.isclose(v, -1 - 0.9 + 0.81 * 53)
    assert np.isclose(v, 41.03)


def test_simulate_single_step():
    sc = layout(6, [(2, 2)], [(5, 5)])
    node = mcts.SearchNode(gw.initial_state(sc))
    v = mcts.simulate(node, scripted_guide([PrimitiveAction(0, K.ASTAR)]), 0.9, 1, np.random.default_rng(0))
    assert v == 53.0
    v = mcts.simulate(node, scripted_guide([PrimitiveAction(0, K.UP)]), 0.9, 1, np.random.default_rng(0))
    assert v == -1.0


def test_backprop_chain(open_state):
    child = mcts.SearchNode(open_state, action=0, reward=-1.0)
    root = hand_node(open_state, 0, 0.0, children=[child])
    mcts.backpropagate(child, 7.0, 0.9)
    assert np.isclose(root.V, 0.9 * 7 - 1) and root.N == 1 and child.N == 1


def test_backprop_max_child(open_state):
    a = hand_node(open_state, 1, 2.0, -1.0, action=0)
    b = mcts.SearchNode(open_state, action=1, reward=-1.0)
    root = hand_node(open_state, 1, 0.0, children=[a, b])
    mcts.backpropagate(b, 5.0, 0.9)
    assert np.isclose(root.V, 3.5)


def grow(state, guide, cfg, k, seed=0):
    rng = np.random.default_rng(seed)
    root = mcts.SearchNode(state)
    for _ in range(k):
        node = mcts.select(root, cfg)
        if not node.terminal:
            node = mcts.expand(node, guide, rng)
        value = 0.0 if node.terminal else mcts.simulate(node, guide, cfg.gamma, cfg.t_sim, rng)
        mcts.backpropagate(node, value, cfg.gamma)
    return root


def test_tree_invariants():
    sc = gw.random_scenario(4, 8, 3, 6)
    cfg = mcts.SearchConfig()
    root = grow(gw.initial_state(sc), UniformGuide(), cfg, 80)
    assert root.N == 80
    stack = [root]
    seen = set()
    while stack:
        node = stack.pop()
        assert id(node) not in seen
        seen.add(id(node))
        assert node.N >= sum(c.N for c in node.children.values())
        for a, c in node.children.items():
            assert c.parent is node
            ref, out = gw.step(node.state, PrimitiveAction.from_index(a))
            assert out.reward == c.reward and np.array_equal(ref.poses, c.state.poses)
            assert np.isfinite(c.V)
            stack.append(c)


def test_search_single_action():
    s = gw.initial_state(layout(5, [(1, 0)], [(4, 4)], walls=[(0, 0), (2, 0), (3, 4), (4, 3)]))
    assert mcts.search(s, UniformGuide(), mcts.SearchConfig(iterations=1)) == PrimitiveAction(0, K.DOWN)


def test_search_picks_astar_for_clear_route():
    for seed in range(5):
        sc = layout(8, [(1, 6)], [(6, 2)])
        a = mcts.search(gw.initial_state(sc), UniformGuide(), mcts.SearchConfig(iterations=25),
                        np.random.default_rng(seed))
        assert a == PrimitiveAction(0, K.ASTAR)


def test_search_deterministic_and_errors():
    s = gw.initial_state(gw.random_scenario(5, 10, 2, 10))
    a = mcts.search(s, UniformGuide(), mcts.SearchConfig(iterations=30), np.random.default_rng(4))
    b = mcts.search(s, UniformGuide(), mcts.SearchConfig(iterations=30), np.random.default_rng(4))
    assert a == b
    done = gw.initial_state(layout(4, [(1, 1)], [(1, 1)]))
    with pytest.raises(NoLegalAction):
        mcts.search(done, UniformGuide())


def test_plan_episode_already_solved():
    actions, trace, m = mcts.plan_episode(layout(4, [(1, 1)], [(1, 1)]))
    assert actions == [] and trace == [] and m["success"] and m["steps"] == 0


def test_plan_episode_trace_replays():
    sc = gw.random_scenario(4, 10, 5, 10)
    dump = []
    actions, trace, m = mcts.plan_episode(sc, config=mcts.SearchConfig(iterations=32),
                                          rng=np.random.default_rng(0), dump=dump)
    final, outs = gw.replay(sc, actions)
    assert sum(o.reward for o in outs) == m["total_reward"]
    assert gw.is_success(final) == m["success"] and len(actions) == m["steps"]
    assert m["path_length"] == sum(len(r["path"]) - 1 for r in trace)
    assert [r["t"] for r in trace] == list(range(len(actions)))
    assert all({"t", "N", "children"} <= set(d) for d in dump)


def test_config_validation():
    for bad in ({"iterations": 0}, {"c": 0}, {"t_sim": 0}, {"selection": "other"}):
        with pytest.raises(ValueError):
            mcts.SearchConfig(**bad)
    assert mcts.SearchConfig().iterations == 64 and np.isclose(mcts.SearchConfig().c, math.sqrt(2))
