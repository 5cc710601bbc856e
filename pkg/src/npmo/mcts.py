"""Policy-guided Monte Carlo tree search over primitive actions.

One tree is built per decision. Nodes keep a visit count ``N`` and a value
``V``; the value of a leaf is the discounted reward of a guided rollout and
interior nodes back up the best child, ``V(s) = max_a [r(s, a) + gamma V(s')]``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from . import gridworld as gw
from .agents import EpisodeResult, NetworkGuide, UniformGuide, run_episode
from .geometry import PrimitiveAction
from .policy_net import ActionDistribution, NoLegalAction

SELECTION_MODES = ("value-augmented", "paper-literal")


class FullyExpanded(RuntimeError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    iterations: int = 64
    c: float = math.sqrt(2.0)
    gamma: float = 0.95
    # rollout cap; None means the steps left before t_max
    t_sim: Optional[int] = None
    selection: str = "value-augmented"

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.c <= 0:
            raise ValueError("c must be > 0")
        if self.t_sim is not None and self.t_sim < 1:
            raise ValueError("t_sim must be >= 1")
        if self.selection not in SELECTION_MODES:
            raise ValueError(f"selection must be one of {SELECTION_MODES}")


class SearchNode:
    __slots__ = ("state", "N", "V", "children", "parent", "action", "reward", "terminal", "untried")

    def __init__(self, state: gw.WorldState, parent: Optional["SearchNode"] = None,
                 action: Optional[int] = None, reward: float = 0.0):
        self.state = state
        self.N = 0
        self.V = 0.0
        self.children: Dict[int, SearchNode] = {}
        self.parent = parent
        self.action = action
        self.reward = reward
        cand = gw.candidate_mask(state) if not state.done else None
        self.terminal = cand is None or not cand.any()
        # unexpanded candidate actions, ascending
        self.untried: List[int] = [] if self.terminal else [int(a) for a in np.flatnonzero(cand.reshape(-1))]

    def q(self, gamma: float) -> float:
        """Edge value ``r + gamma V`` seen from the parent."""
        return self.reward + gamma * self.V

    def best_child(self, gamma: float) -> "SearchNode":
        best, best_q = None, -math.inf
        for a in sorted(self.children):
            q = self.children[a].q(gamma)
            if q > best_q:
                best, best_q = self.children[a], q
        return best

    def __repr__(self):
        return f"SearchNode(action={self.action}, N={self.N}, V={self.V:.3f}, children={len(self.children)})"


class CachedGuide:
    """Memoises a guide's distribution per (layout, previous action); the
    network input depends on nothing else."""

    def __init__(self, guide):
        self.guide = guide
        self.cache = {}

    def __call__(self, state: gw.WorldState) -> ActionDistribution:
        prev = -1 if state.prev_action is None else state.prev_action.index
        key = (state.key(), prev)
        dist = self.cache.get(key)
        if dist is None:
            dist = self.guide(state)
            self.cache[key] = dist
        return dist


def selection_score(child: SearchNode, parent: SearchNode, config: SearchConfig, lo: float, hi: float) -> float:
    explore = config.c * math.sqrt(math.log(max(parent.N, 1)) / (1 + child.N))
    if config.selection == "paper-literal":
        return explore
    q = child.q(config.gamma)
    norm = (q - lo) / (hi - lo) if hi > lo else 0.0
    return norm + explore


def select(root: SearchNode, config: SearchConfig) -> SearchNode:
    """Descend through fully expanded nodes by the selection score."""
    node = root
    while not node.terminal and not node.untried and node.children:
        actions = sorted(node.children)
        qs = [node.children[a].q(config.gamma) for a in actions]
        lo, hi = min(qs), max(qs)
        best, best_score = None, -math.inf
        for a in actions:
            s = selection_score(node.children[a], node, config, lo, hi)
            if s > best_score:
                best, best_score = node.children[a], s
        node = best
    return node


def expand(node: SearchNode, guide, rng: np.random.Generator) -> SearchNode:
    """Add one child, sampling among the unexpanded actions in proportion to
    the guide's probabilities (uniformly if they all have zero mass)."""
    if node.terminal or not node.untried:
        raise FullyExpanded("no unexpanded action")
    untried = np.asarray(node.untried)
    p = guide(node.state).probs[untried]
    total = p.sum()
    p = p / total if total > 0 else np.full(len(untried), 1.0 / len(untried))
    a = int(untried[ActionDistribution(p, np.ones(len(p), dtype=bool)).sample(rng)])
    node.untried.remove(a)
    state, out = gw.step(node.state, PrimitiveAction.from_index(a))
    child = SearchNode(state, node, a, out.reward)
    node.children[a] = child
    return child


def simulate(node: SearchNode, guide, gamma: float, t_sim: Optional[int], rng: np.random.Generator) -> float:
    """Discounted reward of a guided rollout from ``node``; stops at done, at
    a dead end or after ``t_sim`` steps."""
    state = node.state
    limit = state.t_max - state.t if t_sim is None else t_sim
    total, discount = 0.0, 1.0
    for _ in range(limit):
        if state.done or not gw.candidate_mask(state).any():
            break
        a = guide(state).sample(rng)
        state, out = gw.step(state, PrimitiveAction.from_index(a))
        total += discount * out.reward
        discount *= gamma
    return total


def backpropagate(leaf: SearchNode, value: float, gamma: float) -> None:
    leaf.V = value
    leaf.N += 1
    node = leaf.parent
    while node is not None:
        node.V = node.best_child(gamma).q(gamma)
        node.N += 1
        node = node.parent


def root_summary(root: SearchNode, gamma: float):
    return [{"action": a, "label": str(PrimitiveAction.from_index(a)), "N": c.N, "V_n": c.V,
             "reward": c.reward, "Q": c.q(gamma)} for a, c in sorted(root.children.items())]


def search(state: gw.WorldState, guide, config: SearchConfig = SearchConfig(), rng: np.random.Generator = None,
           dump: Optional[list] = None) -> PrimitiveAction:
    """Best root action after ``config.iterations`` search iterations."""
    rng = rng if rng is not None else np.random.default_rng(0)
    root = SearchNode(state)
    if root.terminal:
        raise NoLegalAction("search called on a finished or stuck state")
    if len(root.untried) == 1:
        return PrimitiveAction.from_index(root.untried[0])
    guide = guide if isinstance(guide, CachedGuide) else CachedGuide(guide)
    for _ in range(config.iterations):
        node = select(root, config)
        if not node.terminal:
            node = expand(node, guide, rng)
        value = 0.0 if node.terminal else simulate(node, guide, config.gamma, config.t_sim, rng)
        backpropagate(node, value, config.gamma)
    if dump is not None:
        dump.append({"t": state.t, "N": root.N, "children": root_summary(root, config.gamma)})
    return PrimitiveAction.from_index(root.best_child(config.gamma).action)


def make_guide(params=None, n_max: int = gw.N_MAX):
    return UniformGuide(n_max) if params is None else NetworkGuide(params)


def plan_episode(scenario: gw.Scenario, params=None, config: SearchConfig = SearchConfig(),
                 rng: np.random.Generator = None, t_max: int = gw.T_MAX, dump: Optional[list] = None):
    """Search-and-step until done. ``params=None`` uses uniform guidance.

    Returns ``(actions, trace, metrics)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n_max = params.config.n_max if params is not None else max(gw.N_MAX, scenario.n_objects)
    guide = CachedGuide(make_guide(params, n_max))
    result = run_episode(scenario, lambda s: search(s, guide, config, rng, dump), t_max)
    return result.actions, result.records, episode_metrics(result)


def episode_metrics(result: EpisodeResult) -> dict:
    return {"total_reward": result.total_reward, "steps": result.steps, "success": result.success,
            "path_length": result.path_length}


def write_dump(dump: list, path) -> None:
    with open(path, "w") as fh:
        json.dump(dump, fh, indent=1)


def config_to_dict(config: SearchConfig) -> dict:
    return asdict(config)
