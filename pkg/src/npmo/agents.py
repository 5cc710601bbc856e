"""Action guides and plain policy play.

A guide maps a ``WorldState`` to an ``ActionDistribution`` over the
flattened ``(object, primitive)`` space, restricted to the candidate actions
of that state. The tree search, the rollout collector and the benchmark all
talk to guides, so a network and a uniform-random policy are interchangeable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import gridworld as gw
from .geometry import N_KINDS, PrimitiveAction
from .policy_net import ActionDistribution, PolicyParams, forward, make_aux, masked_distribution


def flat_mask(state: gw.WorldState, n_max: int) -> np.ndarray:
    mask = np.zeros(n_max * N_KINDS, dtype=bool)
    cand = gw.candidate_mask(state)
    mask[:cand.size] = cand.reshape(-1)
    return mask


def state_inputs(state: gw.WorldState, n_max: int):
    prev = None if state.prev_action is None else state.prev_action.index
    lengths, _ = state.table()
    aux = make_aux(state.at_target, prev, n_max, lengths, state.arrival_blocks(), state.scenario.M)
    return gw.encode_observation(state, n_max), aux


class NetworkGuide:
    def __init__(self, params: PolicyParams, temperature: float = 1.0):
        self.params = params
        self.n_max = params.config.n_max
        self.temperature = temperature

    def evaluate(self, state):
        """``(distribution, value)`` for one state."""
        obs, aux = state_inputs(state, self.n_max)
        logits, value = forward(self.params, obs, aux)
        return masked_distribution(logits, flat_mask(state, self.n_max), self.temperature), value

    def __call__(self, state) -> ActionDistribution:
        return self.evaluate(state)[0]


class UniformGuide:
    def __init__(self, n_max: int = gw.N_MAX):
        self.n_max = n_max

    def __call__(self, state) -> ActionDistribution:
        mask = flat_mask(state, self.n_max)
        if not mask.any():
            raise gw.IllegalAction("no candidate action")
        return ActionDistribution(mask / mask.sum(), mask)


@dataclass
class EpisodeResult:
    actions: List[PrimitiveAction] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    records: List[dict] = field(default_factory=list)
    success: bool = False
    path_length: int = 0
    t_max: int = gw.T_MAX

    @property
    def total_reward(self) -> float:
        return float(sum(self.rewards))

    @property
    def steps(self) -> int:
        return len(self.actions)

    @property
    def steps_metric(self) -> int:
        """Steps with failed runs counted as ``t_max``."""
        return self.steps if self.success else self.t_max

    def add(self, action: PrimitiveAction, t: int, out: gw.StepOutcome) -> None:
        self.actions.append(action)
        self.rewards.append(out.reward)
        self.path_length += len(out.moved_path) - 1
        self.records.append(gw.trace_record(t, action, out))
        self.success = out.success


def run_episode(scenario: gw.Scenario, choose, t_max: int = gw.T_MAX) -> EpisodeResult:
    """Drive one episode with ``choose(state) -> PrimitiveAction``; an empty
    candidate set ends the episode as a failure."""
    state = gw.initial_state(scenario, t_max)
    result = EpisodeResult(t_max=t_max, success=state.success)
    while not state.done:
        if not gw.candidate_mask(state).any():
            break
        action = choose(state)
        t = state.t
        state, out = gw.step(state, action)
        result.add(action, t, out)
    return result


def play_policy(scenario: gw.Scenario, guide, rng: Optional[np.random.Generator] = None,
                greedy: bool = True, t_max: int = gw.T_MAX) -> EpisodeResult:
    def choose(state):
        dist = guide(state)
        idx = dist.greedy() if greedy else dist.sample(rng)
        return PrimitiveAction.from_index(idx)

    return run_episode(scenario, choose, t_max)
