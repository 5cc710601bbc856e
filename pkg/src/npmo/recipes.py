"""Desk-scale training recipes shared by the CLI, the acceptance suite and
the benchmark scripts.

``train_guides`` produces the two guidance networks used in comparisons:
behaviour cloning followed by PPO, and PPO from a random initialisation.
Results can be cached on disk under a key derived from the recipe and the
package sources, so a code change always retrains.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

from . import bench, imitation, ppo
from .policy_net import NetConfig, PolicyParams, init_params, load_params, save_params

log = logging.getLogger(__name__)

TRAIN_ENV = imitation.ScenarioConfig((3, 5, 8, 10), 10, bench.SUITE_IMMOVABLE)


@dataclass(frozen=True)
class Recipe:
    env: imitation.ScenarioConfig = TRAIN_ENV
    net: NetConfig = field(default_factory=NetConfig)
    seed: int = 0
    bc_episodes: int = 100
    bc_epochs: int = 4
    bc_learning_rate: float = 1e-3
    ppo_iterations: int = 150
    scratch_iterations: int = 150
    eval_objects: int = 10
    eval_count: int = 50
    eval_every: int = 10

    def ppo_config(self, iterations: int, seed: int) -> ppo.PpoConfig:
        return ppo.PpoConfig(iterations=iterations, env=self.env, seed=seed)

    def eval_suite(self):
        return bench.make_suite(self.eval_objects, self.eval_count, self.seed + 1, self.env.M, self.env.n_immovable)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["env"]["object_counts"] = list(d["env"]["object_counts"])
        d["net"]["conv_channels"] = list(d["net"]["conv_channels"])
        return d


def source_digest() -> str:
    """Hash of the package sources (Python and Cython)."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for p in sorted(list(root.glob("*.py")) + list(root.glob("*.pyx"))):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def cache_key(tag: str, payload: dict) -> str:
    blob = json.dumps({"tag": tag, "payload": payload, "src": source_digest()}, sort_keys=True)
    return f"{tag}-{hashlib.sha256(blob.encode()).hexdigest()[:16]}"


class Cache:
    """Checkpoints and JSON blobs in a directory; ``root=None`` disables it."""

    def __init__(self, root=None):
        self.root = Path(root) if root else None
        if self.root:
            self.root.mkdir(parents=True, exist_ok=True)

    def params(self, key: str, build) -> PolicyParams:
        if self.root is None:
            return build()
        path = self.root / f"{key}.npz"
        if path.exists():
            return load_params(path)
        params = build()
        save_params(params, path)
        return params

    def json(self, key: str, build):
        if self.root is None:
            return build()
        path = self.root / f"{key}.json"
        if path.exists():
            return json.loads(path.read_text())
        value = build()
        path.write_text(json.dumps(value))
        return value


def expert_dataset(recipe: Recipe, episodes: Optional[int] = None) -> imitation.ExpertDataset:
    return imitation.collect_expert_dataset(episodes or recipe.bc_episodes, recipe.env, seed=recipe.seed,
                                            n_max=recipe.net.n_max)


def bc_params(recipe: Recipe, epochs: int, dataset=None, cache: Cache = Cache()) -> PolicyParams:
    def build():
        ds = dataset if dataset is not None else expert_dataset(recipe)
        p, _ = imitation.bc_train(init_params(recipe.seed, recipe.net), ds, epochs=epochs,
                                  learning_rate=recipe.bc_learning_rate, seed=recipe.seed)
        return p

    if epochs == 0:
        return init_params(recipe.seed, recipe.net)
    episodes = len(dataset.episodes) if dataset is not None else recipe.bc_episodes
    return cache.params(cache_key("bc", {**recipe.to_dict(), "epochs": epochs, "episodes": episodes}), build)


def train_guides(recipe: Recipe = Recipe(), cache: Cache = Cache()) -> Dict[str, PolicyParams]:
    """``{"bc": ..., "bc+ppo": ..., "ppo": ...}`` parameter sets."""
    suite = recipe.eval_suite()
    bc = bc_params(recipe, recipe.bc_epochs, cache=cache)

    def ppo_from(init, iterations, seed):
        def build():
            best, _ = ppo.train(init, recipe.ppo_config(iterations, seed), suite, eval_every=recipe.eval_every)
            return best
        return build

    key = recipe.to_dict()
    bc_ppo = cache.params(cache_key("bc_ppo", key), ppo_from(bc, recipe.ppo_iterations, recipe.seed))
    scratch = cache.params(cache_key("ppo_only", key),
                           ppo_from(init_params(recipe.seed, recipe.net), recipe.scratch_iterations, recipe.seed))
    return {"bc": bc, "bc+ppo": bc_ppo, "ppo": scratch}


def quick_recipe(**kw) -> Recipe:
    """A much smaller recipe for smoke tests."""
    base = Recipe(bc_episodes=40, bc_epochs=2, ppo_iterations=2, scratch_iterations=2, eval_count=5, eval_every=1)
    return replace(base, **kw)


@dataclass(frozen=True)
class AblationConfig:
    """Imitation-level study: PPO started from BC networks trained for
    different epoch budgets on one small expert dataset."""

    budgets: tuple = (0, 1, 4, 64)
    medium: int = 4
    dataset_episodes: int = 100
    iterations: int = 40
    threshold: float = 0.9
    eval_count: int = 100
    eval_every: int = 1


def imitation_ablation(recipe: Recipe = Recipe(), config: AblationConfig = AblationConfig(),
                       cache: Cache = Cache()) -> Dict[int, dict]:
    """``{budget: {"iterations": n or None, "curve": [...]}}``; ``iterations``
    is the first PPO iteration whose greedy success rate on the evaluation
    suite reaches ``config.threshold`` (0 means the BC network already does)."""
    suite = bench.make_suite(recipe.eval_objects, config.eval_count, recipe.seed + 2, recipe.env.M,
                             recipe.env.n_immovable)
    dataset = None
    out = {}
    for budget in config.budgets:
        def run(budget=budget):
            nonlocal dataset
            if budget and dataset is None:
                dataset = expert_dataset(recipe, config.dataset_episodes)
            init = bc_params(recipe, budget, dataset) if budget else init_params(recipe.seed, recipe.net)
            _, curve = ppo.train(init, recipe.ppo_config(config.iterations, recipe.seed), suite,
                                 eval_every=config.eval_every, target_success=config.threshold)
            return {"iterations": ppo.iterations_to_threshold(curve, config.threshold),
                    "curve": [{k: (None if v != v else v) for k, v in row.items()} for row in curve]}

        payload = {**recipe.to_dict(), **asdict(config), "budget": budget}
        payload["budgets"] = list(payload["budgets"])
        out[budget] = cache.json(cache_key("ablation", payload), run)
    return out
