"""Clipped-surrogate policy optimisation of the policy-value network."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import gridworld as gw
from .agents import NetworkGuide, flat_mask, play_policy, state_inputs
from .geometry import PrimitiveAction
from .imitation import ScenarioConfig
from .policy_net import (N_AUX_SLOT, Adam, PolicyParams, backward, forward_batch, masked_distribution,
                         masked_log_softmax)


class NonFiniteLoss(FloatingPointError):
    pass


@dataclass
class PpoConfig:
    clip: float = 0.2
    c1: float = 0.5
    c2: float = 0.001
    gamma: float = 0.95
    lam: float = 0.95
    learning_rate: float = 2e-4
    iterations: int = 500
    n_envs: int = 8
    horizon: int = 32
    epochs: int = 4
    minibatch: int = 64
    max_grad_norm: float = 0.5
    # the value head predicts returns multiplied by this factor
    value_scale: float = 0.02
    seed: int = 0
    env: ScenarioConfig = field(default_factory=ScenarioConfig)

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError("clip must lie in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must lie in [0, 1]")
        if isinstance(self.env, dict):
            self.env = ScenarioConfig(**self.env)

    @classmethod
    def paper_scale(cls, **kw) -> "PpoConfig":
        kw.setdefault("iterations", 8000)
        kw.setdefault("n_envs", 28)
        return cls(**kw)


@dataclass
class RolloutBatch:
    """Arrays are laid out ``(horizon, n_envs, ...)``; values are in reward units."""

    obs: np.ndarray
    aux: np.ndarray
    masks: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    last_values: np.ndarray
    episodes: List[dict] = field(default_factory=list)

    def __len__(self):
        return self.actions.size

    def flat(self, name):
        a = getattr(self, name)
        return a.reshape((-1,) + a.shape[2:])


class RolloutCollector:
    """Keeps ``n_envs`` episodes running across calls to ``collect``."""

    def __init__(self, env: ScenarioConfig, n_envs: int, seed: int, n_max: int = gw.N_MAX,
                 t_max: int = gw.T_MAX):
        self.env = env
        self.n_envs = n_envs
        self.n_max = n_max
        self.t_max = t_max
        self.rng = np.random.default_rng(seed)
        self.states = [self._reset() for _ in range(n_envs)]
        self.logs = [[] for _ in range(n_envs)]

    def _reset(self):
        while True:
            state = gw.initial_state(self.env.sample(self.rng), self.t_max)
            if not state.done and gw.candidate_mask(state).any():
                return state

    def collect(self, params: PolicyParams, horizon: int, value_scale: float = 0.02) -> RolloutBatch:
        E, n_max = self.n_envs, self.n_max
        M = self.env.M
        obs = np.zeros((horizon, E, M, M, 2 * n_max + 1), dtype=np.uint8)
        aux = np.zeros((horizon, E, n_max * N_AUX_SLOT))
        masks = np.zeros((horizon, E, n_max * 5), dtype=bool)
        actions = np.zeros((horizon, E), dtype=np.int64)
        logp = np.zeros((horizon, E))
        rewards = np.zeros((horizon, E))
        values = np.zeros((horizon, E))
        dones = np.zeros((horizon, E), dtype=bool)
        finished = []
        for t in range(horizon):
            for e, state in enumerate(self.states):
                obs[t, e], aux[t, e] = state_inputs(state, n_max)
                masks[t, e] = flat_mask(state, n_max)
            logits, vals, _ = forward_batch(params, obs[t], aux[t])
            values[t] = vals / value_scale
            for e, state in enumerate(self.states):
                dist = masked_distribution(logits[e], masks[t, e])
                a = dist.sample(self.rng)
                actions[t, e] = a
                logp[t, e] = dist.log_prob(a)
                nxt, out = gw.step(state, PrimitiveAction.from_index(a))
                rewards[t, e] = out.reward
                self.logs[e].append((a, out.reward))
                # a state without candidates cannot continue: end it as a failure
                done = out.done or not gw.candidate_mask(nxt).any()
                dones[t, e] = done
                if done:
                    acts, rews = zip(*self.logs[e])
                    finished.append({"scenario": state.scenario, "actions": list(acts), "rewards": list(rews),
                                     "success": out.success})
                    self.logs[e] = []
                    nxt = self._reset()
                self.states[e] = nxt
        last = np.zeros(E)
        o = np.zeros((E, M, M, 2 * n_max + 1), dtype=np.uint8)
        x = np.zeros((E, n_max * N_AUX_SLOT))
        for e, state in enumerate(self.states):
            o[e], x[e] = state_inputs(state, n_max)
        _, vals, _ = forward_batch(params, o, x)
        last[:] = vals / value_scale
        return RolloutBatch(obs, aux, masks, actions, logp, rewards, values, dones, last, finished)


def collect_rollouts(params: PolicyParams, env: ScenarioConfig, horizon: int, n_envs: int, seed: int,
                     value_scale: float = 0.02) -> RolloutBatch:
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    collector = RolloutCollector(env, n_envs, seed, params.config.n_max)
    return collector.collect(params, horizon, value_scale)


def compute_advantages(batch: RolloutBatch, gamma: float, lam: float, normalize: bool = True):
    """Generalised advantage estimates and value targets.

    ``V_target = A + V`` uses the raw advantages; the returned advantages are
    standardised per batch when ``normalize`` is set (skipped for a single
    sample).
    """
    r, v, d = batch.rewards, batch.values, batch.dones.astype(np.float64)
    T = r.shape[0]
    adv = np.zeros_like(r)
    running = np.zeros(r.shape[1:])
    for t in reversed(range(T)):
        nxt = batch.last_values if t == T - 1 else v[t + 1]
        nonterminal = 1.0 - d[t]
        delta = r[t] + gamma * nxt * nonterminal - v[t]
        running = delta + gamma * lam * nonterminal * running
        adv[t] = running
    targets = adv + v
    if normalize and adv.size > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv, targets


def clipped_surrogate(ratio, adv, clip):
    """Per-sample ``min(r A, clip(r) A)`` and its derivative w.r.t. ``r``."""
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - clip, 1 + clip) * adv
    use_unclipped = unclipped <= clipped
    return np.where(use_unclipped, unclipped, clipped), np.where(use_unclipped, adv, 0.0)


def ppo_loss(logits, values, masks, actions, old_logp, adv, v_target, cfg: PpoConfig):
    """Negated objective ``-(L_clip - c1 L_vf + c2 S)`` with its gradients
    w.r.t. logits and values, plus diagnostics."""
    B = len(actions)
    rows = np.arange(B)
    logp_all = masked_log_softmax(logits, masks)
    p = np.where(masks, np.exp(logp_all), 0.0)
    logp = logp_all[rows, actions]
    ratio = np.exp(logp - old_logp)
    surr, dsurr_dr = clipped_surrogate(ratio, adv, cfg.clip)
    plogp = np.where(masks, p * np.where(masks, logp_all, 0.0), 0.0)
    ent = -plogp.sum(axis=1)
    scaled_target = v_target * cfg.value_scale
    vloss = (values - scaled_target) ** 2

    objective = surr.mean() - cfg.c1 * vloss.mean() + cfg.c2 * ent.mean()
    # d surr / d logits = dsurr_dr * r * (onehot - p)
    g_logp = dsurr_dr * ratio / B
    dlogits = -g_logp[:, None] * (-p)
    dlogits[rows, actions] += -g_logp
    # d entropy / d logits_j = -p_j (log p_j + H)
    dent = -p * (np.where(masks, logp_all, 0.0) + ent[:, None])
    dlogits -= cfg.c2 * dent / B
    dvalues = cfg.c1 * 2.0 * (values - scaled_target) / B
    stats = {
        "ratio": float(ratio.mean()),
        "clip_frac": float((np.abs(ratio - 1) > cfg.clip).mean()),
        "value_loss": float(vloss.mean()),
        "entropy": float(ent.mean()),
        "surrogate": float(surr.mean()),
        "approx_kl": float((old_logp - logp).mean()),
    }
    return -objective, dlogits, dvalues, stats


def ppo_update(params: PolicyParams, batch: RolloutBatch, cfg: PpoConfig, opt: Optional[Adam] = None,
               rng: Optional[np.random.Generator] = None):
    """``cfg.epochs`` passes of minibatch ascent on the clipped objective.

    Updates ``params`` in place and returns ``(params, stats)``; a
    non-finite loss or gradient restores the previous parameters and raises
    ``NonFiniteLoss``.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    opt = opt or Adam(params.size, lr=cfg.learning_rate)
    rng = rng or np.random.default_rng(cfg.seed)
    backup = params.flat.copy()
    adv, targets = compute_advantages(batch, cfg.gamma, cfg.lam)
    adv, targets = adv.reshape(-1), targets.reshape(-1)
    obs, aux, masks = batch.flat("obs"), batch.flat("aux"), batch.flat("masks")
    actions, old_logp = batch.flat("actions"), batch.flat("logp")
    n = len(actions)
    rows = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(0, n, cfg.minibatch):
            b = order[s:s + cfg.minibatch]
            logits, values, cache = forward_batch(params, obs[b], aux[b])
            loss, dlogits, dvalues, stats = ppo_loss(logits, values, masks[b], actions[b], old_logp[b],
                                                     adv[b], targets[b], cfg)
            grad = backward(params, cache, dlogits, dvalues)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                params.flat[:] = backup
                raise NonFiniteLoss(f"non-finite loss {loss}")
            norm = np.linalg.norm(grad)
            if cfg.max_grad_norm and norm > cfg.max_grad_norm:
                grad *= cfg.max_grad_norm / norm
            opt.step(params, grad)
            if not np.all(np.isfinite(params.flat)):
                params.flat[:] = backup
                raise NonFiniteLoss("parameters became non-finite")
            rows.append(stats)
    out = {k: float(np.mean([r[k] for r in rows])) for k in rows[0]}
    return params, out


def evaluate_policy(params: PolicyParams, suite: Sequence[gw.Scenario], greedy: bool = True, seed: int = 0):
    """Success rate and mean reward of plain policy play on ``suite``."""
    guide = NetworkGuide(params)
    rng = np.random.default_rng(seed)
    results = [play_policy(sc, guide, rng, greedy=greedy) for sc in suite]
    return {
        "success_rate": float(np.mean([r.success for r in results])) if results else 0.0,
        "mean_reward": float(np.mean([r.total_reward for r in results])) if results else 0.0,
        "mean_steps": float(np.mean([r.steps_metric for r in results])) if results else 0.0,
    }


CURVE_FIELDS = ["iteration", "mean_reward", "success_rate", "entropy", "clip_fraction", "eval_success", "eval_reward"]


def train(params: PolicyParams, cfg: PpoConfig, eval_suite: Sequence[gw.Scenario] = (), eval_every: int = 10,
          target_success: Optional[float] = None, log=None):
    """Alternate rollout collection and clipped updates.

    Every ``eval_every`` iterations (and before the first) the greedy policy
    is evaluated on ``eval_suite``; the best-evaluating parameters are
    returned. With ``target_success`` training stops as soon as the greedy
    success rate on the suite reaches it. Returns ``(params, curve)``; each
    curve row follows ``CURVE_FIELDS``.
    """
    best = params.copy()
    curve = []
    if cfg.iterations <= 0:
        return best, curve
    params = params.copy()
    opt = Adam(params.size, lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    collector = RolloutCollector(cfg.env, cfg.n_envs, int(rng.integers(2**31 - 1)), params.config.n_max)
    best_score = -np.inf

    def evaluate(it, row):
        nonlocal best, best_score
        if not eval_suite:
            return False
        ev = evaluate_policy(params, eval_suite)
        row["eval_success"], row["eval_reward"] = ev["success_rate"], ev["mean_reward"]
        score = (ev["success_rate"], ev["mean_reward"])
        if best_score == -np.inf or score > best_score:
            best, best_score = params.copy(), score
        return target_success is not None and ev["success_rate"] >= target_success

    row0 = {k: float("nan") for k in CURVE_FIELDS}
    row0["iteration"] = 0
    stop = evaluate(0, row0)
    curve.append(row0)
    if log:
        log(row0)
    for it in range(1, cfg.iterations + 1):
        if stop:
            break
        batch = collector.collect(params, cfg.horizon, cfg.value_scale)
        params, stats = ppo_update(params, batch, cfg, opt, rng)
        eps = batch.episodes
        row = {k: float("nan") for k in CURVE_FIELDS}
        row.update(iteration=it,
                   mean_reward=float(np.mean([sum(e["rewards"]) for e in eps])) if eps else float("nan"),
                   success_rate=float(np.mean([e["success"] for e in eps])) if eps else float("nan"),
                   entropy=stats["entropy"], clip_fraction=stats["clip_frac"])
        if it % eval_every == 0 or it == cfg.iterations:
            stop = evaluate(it, row)
        curve.append(row)
        if log:
            log(row)
    if not eval_suite:
        best = params.copy()
    return best, curve


def iterations_to_threshold(curve, threshold: float) -> Optional[int]:
    for row in curve:
        if row["eval_success"] == row["eval_success"] and row["eval_success"] >= threshold:
            return int(row["iteration"])
    return None


def write_curve(curve, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS, extrasaction="ignore")
        w.writeheader()
        for row in curve:
            w.writerow({k: (f"{row[k]:.6g}" if isinstance(row[k], float) else row[k]) for k in CURVE_FIELDS})


def config_from_dict(d: dict) -> PpoConfig:
    d = dict(d)
    env = d.pop("env", {})
    if "object_counts" in env:
        env["object_counts"] = tuple(env["object_counts"])
    return PpoConfig(env=ScenarioConfig(**env), **d)


def config_to_dict(cfg: PpoConfig) -> dict:
    d = asdict(cfg)
    d["env"]["object_counts"] = list(d["env"]["object_counts"])
    return d
