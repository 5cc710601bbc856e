"""Scripted expert, expert-data collection and behaviour cloning."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Sequence

import numpy as np

from . import gridworld as gw
from . import kernels
from .agents import flat_mask, state_inputs
from .geometry import DIRECTIONAL, PrimitiveAction, PrimitiveKind
from .policy_net import Adam, NoLegalAction, PolicyParams, backward, forward_batch, masked_log_softmax

DATASET_FORMAT = "npmo.dataset/1"


class ExpertTooWeak(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# expert

def relaxed_route(state: gw.WorldState, i: int):
    """Cells covered by object ``i`` along a shortest route to its target
    that ignores every movable object (only immovables block)."""
    sc = state.scenario
    w, h = (int(v) for v in sc.sizes[i])
    free = kernels.placement_free(sc.walls, i, w, h)
    x, y = (int(v) for v in state.poses[i])
    tx, ty = (int(v) for v in sc.targets[i])
    route = kernels.astar(free, x, y, tx, ty)
    if route is None:
        return None
    mask = np.zeros((sc.M, sc.M), dtype=bool)
    for px, py in route:
        mask[py:py + h, px:px + w] = True
    return mask


def scripted_expert_action(state: gw.WorldState) -> PrimitiveAction:
    """Greedy expert over the candidate actions.

    1. Route the unfinished object with the shortest A* path (lowest id on
       ties).
    2. Otherwise sweep the blocker that frees the most cells on the
       obstacle-only routes of the unfinished objects (ties: up, down, left,
       right, then lowest id).
    3. Otherwise the candidate with the lowest ``(object, kind)``.
    """
    cand = gw.candidate_mask(state)
    if state.done or not cand.any():
        raise NoLegalAction("expert called on a finished or stuck state")
    lengths, ends = state.table()

    ok = cand[:, PrimitiveKind.ASTAR]
    if ok.any():
        lens = np.where(ok, lengths[:, PrimitiveKind.ASTAR], np.iinfo(np.int32).max)
        return PrimitiveAction(int(np.argmin(lens)), PrimitiveKind.ASTAR)

    sc = state.scenario
    unfinished = np.flatnonzero(~state.at_target)
    routes = {int(i): relaxed_route(state, int(i)) for i in unfinished}
    best, best_key = None, None
    for j in range(state.n_objects):
        w, h = (int(v) for v in sc.sizes[j])
        x, y = (int(v) for v in state.poses[j])
        for kind in DIRECTIONAL:
            if not cand[j, kind]:
                continue
            ex, ey = (int(v) for v in ends[j, kind])
            cleared = 0
            for i, route in routes.items():
                if i == j or route is None:
                    continue
                cleared += int(route[y:y + h, x:x + w].sum()) - int(route[ey:ey + h, ex:ex + w].sum())
            if cleared <= 0:
                continue
            key = (-cleared, int(kind), j)
            if best_key is None or key < best_key:
                best, best_key = PrimitiveAction(j, kind), key
    if best is not None:
        return best

    ii, kk = np.nonzero(cand)
    return PrimitiveAction(int(ii[0]), PrimitiveKind(int(kk[0])))


# ---------------------------------------------------------------------------
# dataset

@dataclass
class ExpertDataset:
    """Expert episodes; observations are re-derived from the scenarios by
    replaying the recorded actions."""

    scenarios: List[gw.Scenario]
    episodes: List[List[int]]
    n_max: int = gw.N_MAX
    t_max: int = gw.T_MAX
    obs: np.ndarray = field(init=False, repr=False)
    aux: np.ndarray = field(init=False, repr=False)
    masks: np.ndarray = field(init=False, repr=False)
    actions: np.ndarray = field(init=False, repr=False)
    episode_ids: np.ndarray = field(init=False, repr=False)
    rewards: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        obs, aux, masks, acts, eids, rews = [], [], [], [], [], []
        for e, (sc, ep) in enumerate(zip(self.scenarios, self.episodes)):
            state = gw.initial_state(sc, self.t_max)
            for a in ep:
                o, x = state_inputs(state, self.n_max)
                m = flat_mask(state, self.n_max)
                if not m[a]:
                    raise gw.IllegalAction(f"episode {e}: action {a} not legal at t={state.t}")
                obs.append(o)
                aux.append(x)
                masks.append(m)
                acts.append(a)
                eids.append(e)
                state, out = gw.step(state, PrimitiveAction.from_index(a))
                rews.append(out.reward)
        M = self.scenarios[0].M if self.scenarios else 1
        self.obs = np.array(obs, dtype=np.uint8).reshape(-1, M, M, 2 * self.n_max + 1)
        self.aux = np.array(aux, dtype=np.float64).reshape(len(acts), -1)
        self.masks = np.array(masks, dtype=bool).reshape(len(acts), -1)
        self.actions = np.array(acts, dtype=np.int64)
        self.episode_ids = np.array(eids, dtype=np.int64)
        self.rewards = np.array(rews, dtype=np.float64)

    def __len__(self):
        return len(self.actions)

    def save(self, path) -> None:
        """Writes ``path`` (JSON lines) and ``path.scenarios.json``."""
        path = Path(path)
        with open(path, "w") as fh:
            for e, ep in enumerate(self.episodes):
                for t, a in enumerate(ep):
                    fh.write(json.dumps({"scenario_ref": e, "t": t, "action_index": int(a)}) + "\n")
        bundle = {"format": DATASET_FORMAT, "n_max": self.n_max, "t_max": self.t_max,
                  "scenarios": [sc.to_dict() for sc in self.scenarios]}
        Path(str(path) + ".scenarios.json").write_text(json.dumps(bundle))

    @classmethod
    def load(cls, path) -> "ExpertDataset":
        path = Path(path)
        bundle = json.loads(Path(str(path) + ".scenarios.json").read_text())
        scenarios = [gw.scenario_from_dict(d) for d in bundle["scenarios"]]
        episodes = [[] for _ in scenarios]
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    rec = json.loads(line)
                    episodes[rec["scenario_ref"]].append(int(rec["action_index"]))
        return cls(scenarios, episodes, bundle["n_max"], bundle["t_max"])


@dataclass(frozen=True)
class ScenarioConfig:
    """Distribution of random training scenarios."""

    object_counts: Sequence[int] = (3, 5)
    M: int = 10
    n_immovable: int = 0

    def sample(self, rng: np.random.Generator) -> gw.Scenario:
        n = int(rng.choice(np.asarray(self.object_counts)))
        seed = int(rng.integers(0, 2**31 - 1))
        return gw.random_scenario(n, self.M, seed, self.n_immovable)


def run_expert(scenario: gw.Scenario, t_max: int = gw.T_MAX):
    """Expert episode: ``(action indices, success)``."""
    state = gw.initial_state(scenario, t_max)
    actions = []
    while not state.done and gw.candidate_mask(state).any():
        a = scripted_expert_action(state)
        actions.append(a.index)
        state, _ = gw.step(state, a)
    return actions, state.success


def collect_expert_dataset(n_episodes: int, config: ScenarioConfig = ScenarioConfig(), seed: int = 0,
                           n_max: int = gw.N_MAX, t_max: int = gw.T_MAX, max_attempts: int = None) -> ExpertDataset:
    """Successful expert episodes only; failures are discarded."""
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    rng = np.random.default_rng(seed)
    max_attempts = max_attempts or 10 * n_episodes + 100
    scenarios, episodes = [], []
    attempts = 0
    while len(episodes) < n_episodes:
        if attempts >= max_attempts:
            raise ExpertTooWeak(f"only {len(episodes)} successes in {attempts} attempts")
        sc = config.sample(rng)
        acts, ok = run_expert(sc, t_max)
        attempts += 1
        if ok:
            scenarios.append(sc)
            episodes.append(acts)
        if attempts == 100 and len(episodes) < 10:
            raise ExpertTooWeak(f"expert success rate {len(episodes)}% over the first 100 attempts")
    return ExpertDataset(scenarios, episodes, n_max, t_max)


# ---------------------------------------------------------------------------
# behaviour cloning

def cross_entropy(logits, masks, actions):
    """Mean masked cross-entropy and its gradient w.r.t. the logits."""
    logp = masked_log_softmax(logits, masks)
    B = len(actions)
    rows = np.arange(B)
    loss = -logp[rows, actions].mean()
    p = np.where(masks, np.exp(logp), 0.0)
    grad = p
    grad[rows, actions] -= 1.0
    return float(loss), grad / B


def evaluate_bc(params: PolicyParams, dataset: ExpertDataset, idx: np.ndarray, batch: int = 512):
    """``(mean cross-entropy, top-1 accuracy)`` on the records ``idx``."""
    if len(idx) == 0:
        return float("nan"), float("nan")
    total, hits = 0.0, 0
    for s in range(0, len(idx), batch):
        b = idx[s:s + batch]
        logits, _, _ = forward_batch(params, dataset.obs[b], dataset.aux[b])
        loss, _ = cross_entropy(logits, dataset.masks[b], dataset.actions[b])
        total += loss * len(b)
        pred = np.argmax(np.where(dataset.masks[b], logits, -np.inf), axis=1)
        hits += int((pred == dataset.actions[b]).sum())
    return total / len(idx), hits / len(idx)


def split_by_episode(dataset: ExpertDataset, holdout: float, seed: int):
    n_ep = len(dataset.episodes)
    order = np.random.default_rng(seed).permutation(n_ep)
    n_val = int(round(holdout * n_ep)) if n_ep > 1 else 0
    val_eps = np.zeros(n_ep, dtype=bool)
    val_eps[order[:n_val]] = True
    is_val = val_eps[dataset.episode_ids]
    return np.flatnonzero(~is_val), np.flatnonzero(is_val)


def bc_train(params: PolicyParams, dataset: ExpertDataset, epochs: int = 3000, batch_size: int = 64,
             learning_rate: float = 1e-4, seed: int = 0, holdout: float = 0.1, log=None):
    """Minimise the masked cross-entropy of the expert actions with Adam.

    Returns ``(params, curve)``; ``curve`` has one dict per epoch with the
    training loss/accuracy and the held-out loss/accuracy (the held-out split
    is 10% of the episodes; with a single episode the training split is
    reported instead).
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    params = params.copy()
    rng = np.random.default_rng(seed)
    train_idx, val_idx = split_by_episode(dataset, holdout, seed)
    opt = Adam(params.size, lr=learning_rate)
    curve = []
    for epoch in range(1, epochs + 1):
        order = rng.permutation(train_idx)
        for s in range(0, len(order), batch_size):
            b = order[s:s + batch_size]
            logits, _, cache = forward_batch(params, dataset.obs[b], dataset.aux[b])
            _, dlogits = cross_entropy(logits, dataset.masks[b], dataset.actions[b])
            opt.step(params, backward(params, cache, dlogits, np.zeros(len(b))))
        train_loss, train_acc = evaluate_bc(params, dataset, train_idx)
        val_loss, val_acc = evaluate_bc(params, dataset, val_idx if len(val_idx) else train_idx)
        row = {"epoch": epoch, "train_loss": train_loss, "train_acc": train_acc,
               "val_loss": val_loss, "val_acc": val_acc}
        curve.append(row)
        if log is not None:
            log(row)
    return params, curve
