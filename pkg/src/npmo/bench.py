"""Scenario suites, method comparison and result tables.

Every method in a comparison sees the same scenarios (paired design): the
scenario for ``(suite seed, object count, index)`` is generated from its own
seed sequence, and the planner for scenario ``i`` draws from
``default_rng([seed, i])``. Results therefore do not depend on evaluation
order. Rewards are undiscounted episode sums; steps of failed runs count as
``t_max``.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import gridworld as gw
from .agents import NetworkGuide, play_policy
from .mcts import SearchConfig, plan_episode
from .policy_net import PolicyParams, load_params

METHOD_KINDS = ("policy-greedy", "policy-sample", "mcts+random", "mcts+policy")
SCENARIO_SCHEMA = "npmo.scenarios/1"
BASELINES_PATH = Path(__file__).with_name("baselines.json")
DEFAULT_SIZES = (3, 5, 8, 10)
LONG_SIZES = (15, 20)
# immovable cells per generated benchmark scenario
SUITE_IMMOVABLE = 15


class CheckpointMissing(FileNotFoundError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, field: str = "", line: Optional[int] = None):
        where = field + (f" (line {line})" if line is not None else "")
        super().__init__(f"{where}: {message}" if where else message)
        self.field = field
        self.line = line


# ---------------------------------------------------------------------------
# methods

@dataclass
class MethodSpec:
    name: str
    kind: str
    checkpoint: Optional[str] = None
    search: SearchConfig = field(default_factory=SearchConfig)
    params: Optional[PolicyParams] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in METHOD_KINDS:
            raise ValueError(f"unknown method kind {self.kind!r}")
        needs = self.kind != "mcts+random"
        if needs and self.checkpoint is None and self.params is None:
            raise ValueError(f"method {self.name!r} needs a checkpoint")
        if not needs and (self.checkpoint is not None or self.params is not None):
            raise ValueError(f"method {self.name!r} takes no checkpoint")

    def load(self) -> Optional[PolicyParams]:
        if self.kind == "mcts+random":
            return None
        if self.params is None:
            path = Path(self.checkpoint)
            if not path.exists():
                raise CheckpointMissing(str(path))
            self.params = load_params(path)
        return self.params

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "checkpoint": self.checkpoint,
                "search": {"iterations": self.search.iterations, "c": self.search.c, "gamma": self.search.gamma,
                           "t_sim": self.search.t_sim, "selection": self.search.selection}}

    @classmethod
    def from_dict(cls, d: dict) -> "MethodSpec":
        return cls(d["name"], d["kind"], d.get("checkpoint"), SearchConfig(**d.get("search", {})))


# ---------------------------------------------------------------------------
# suites

def scenario_seed(seed: int, n_objects: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, n_objects, index]).generate_state(1)[0])


def make_suite(n_objects: int, count: int, seed: int, M: int = 10,
               n_immovable: int = SUITE_IMMOVABLE) -> List[gw.Scenario]:
    return [gw.random_scenario(n_objects, M, scenario_seed(seed, n_objects, i), n_immovable) for i in range(count)]


@dataclass
class ScenarioRecord:
    index: int
    n_objects: int
    reward: float
    steps: int
    success: bool
    path_length: int
    wall_time: float = 0.0

    def steps_metric(self, t_max: int = gw.T_MAX) -> int:
        return self.steps if self.success else t_max


@dataclass
class SuiteResult:
    method: str
    records: List[ScenarioRecord]
    t_max: int = gw.T_MAX

    @property
    def success_rate(self) -> float:
        """Percent of solved scenarios."""
        return 100.0 * sum(r.success for r in self.records) / len(self.records) if self.records else 0.0

    @property
    def mean_reward(self) -> float:
        return float(np.mean([r.reward for r in self.records])) if self.records else 0.0

    @property
    def step_counts(self) -> np.ndarray:
        return np.array([r.steps_metric(self.t_max) for r in self.records], dtype=np.float64)

    @property
    def mean_steps(self) -> float:
        return float(self.step_counts.mean()) if self.records else 0.0

    @property
    def mean_path_length(self) -> float:
        return float(np.mean([r.path_length for r in self.records])) if self.records else 0.0

    def length_stats(self):
        """``(mean, std, sem)`` of the action-sequence length."""
        s = self.step_counts
        if len(s) == 0:
            return 0.0, 0.0, 0.0
        std = float(s.std(ddof=1)) if len(s) > 1 else 0.0
        return float(s.mean()), std, std / np.sqrt(len(s))


def run_scenario(method: MethodSpec, scenario: gw.Scenario, rng: np.random.Generator, t_max: int = gw.T_MAX):
    """``(reward, steps, success, path_length, actions, trace)`` of one run."""
    params = method.load()
    if method.kind in ("policy-greedy", "policy-sample"):
        res = play_policy(scenario, NetworkGuide(params), rng, greedy=method.kind == "policy-greedy", t_max=t_max)
        return res.total_reward, res.steps, res.success, res.path_length, res.actions, res.records
    actions, trace, m = plan_episode(scenario, params, method.search, rng, t_max)
    return m["total_reward"], m["steps"], m["success"], m["path_length"], actions, trace


def run_suite(method: MethodSpec, suite: Sequence[gw.Scenario], seed: int, t_max: int = gw.T_MAX,
              log=None) -> SuiteResult:
    method.load()
    records = []
    for i, sc in enumerate(suite):
        t0 = time.perf_counter()
        reward, steps, success, plen, _, _ = run_scenario(method, sc, np.random.default_rng([seed, i]), t_max)
        rec = ScenarioRecord(i, sc.n_objects, float(reward), int(steps), bool(success), int(plen),
                             time.perf_counter() - t0)
        records.append(rec)
        if log:
            log(method.name, rec)
    return SuiteResult(method.name, records, t_max)


RECORD_FIELDS = ["index", "n_objects", "reward", "steps", "success", "path_length"]


def write_records_csv(result: SuiteResult, path, include_time: bool = False) -> None:
    fields = RECORD_FIELDS + (["wall_time"] if include_time else [])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method"] + fields)
        for r in result.records:
            row = [result.method, r.index, r.n_objects, _fmt(r.reward), r.steps, int(r.success), r.path_length]
            if include_time:
                row.append(f"{r.wall_time:.4f}")
            w.writerow(row)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


# ---------------------------------------------------------------------------
# comparison

@dataclass
class Comparison:
    methods: List[str]
    sizes: List[int]
    results: Dict[str, Dict[int, SuiteResult]]

    def get(self, method: str, size: int) -> SuiteResult:
        return self.results[method][size]

    def average(self, method: str, metric: str) -> float:
        return float(np.mean([getattr(self.results[method][n], metric) for n in self.sizes]))

    def table_rows(self) -> List[List[str]]:
        """Rows of the comparison table: three metric rows per object count
        then three average rows."""
        header = ["objects", "metric"] + self.methods
        rows = [header]
        metrics = (("Rewards", "mean_reward"), ("Steps", "mean_steps"), ("SR(%)", "success_rate"))
        for n in self.sizes:
            for label, attr in metrics:
                rows.append([f"{n}-obj.", label] + [_fmt(getattr(self.get(m, n), attr)) for m in self.methods])
        for label, attr in metrics:
            rows.append(["Average", label] + [_fmt(self.average(m, attr)) for m in self.methods])
        return rows

    def length_rows(self) -> List[List[str]]:
        rows = [["method", "objects", "mean", "std", "sem"]]
        for m in self.methods:
            for n in self.sizes:
                mean, std, sem = self.get(m, n).length_stats()
                rows.append([m, str(n), f"{mean:.3f}", f"{std:.3f}", f"{sem:.3f}"])
        return rows

    def write_csv(self, out_dir) -> Dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {"table": out_dir / "comparison.csv", "lengths": out_dir / "sequence_lengths.csv",
                 "text": out_dir / "comparison.txt"}
        _write_rows(paths["table"], self.table_rows(), comment="rewards are undiscounted episode sums; "
                    "steps of failed runs count as t_max")
        _write_rows(paths["lengths"], self.length_rows())
        paths["text"].write_text(self.render())
        for m in self.methods:
            for n in self.sizes:
                write_records_csv(self.get(m, n), out_dir / f"records_{_slug(m)}_{n}.csv")
        return paths

    def render(self, baselines: Optional[dict] = None) -> str:
        """Aligned-text table; with ``baselines`` the reference
        numbers are appended for display."""
        rows = self.table_rows()
        text = _align(rows)
        if baselines:
            ref = [["objects", "metric"] + baselines["methods"]]
            for n, block in baselines["sizes"].items():
                for label, key in (("Rewards", "rewards"), ("Steps", "steps"), ("SR(%)", "sr")):
                    ref.append([f"{n}-obj.", label] + [str(block[m][key]) for m in baselines["methods"]])
            text += "\nreference results (display only)\n" + _align(ref)
        return text


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name).strip("_").lower()


def _write_rows(path, rows, comment: Optional[str] = None) -> None:
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        csv.writer(fh).writerows(rows)


def _align(rows) -> str:
    widths = [max(len(str(r[i])) for r in rows) for i in range(len(rows[0]))]
    lines = ["  ".join(str(c).rjust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def compare_methods(methods: Sequence[MethodSpec], sizes: Sequence[int] = DEFAULT_SIZES, count: int = 100,
                    seed: int = 0, M: int = 10, n_immovable: int = SUITE_IMMOVABLE, t_max: int = gw.T_MAX,
                    log=None) -> Comparison:
    if len(methods) < 2:
        raise ValueError("compare_methods needs at least two methods")
    names = [m.name for m in methods]
    if len(set(names)) != len(names):
        raise ValueError("method names must be unique")
    results = {m.name: {} for m in methods}
    for n in sizes:
        suite = make_suite(n, count, seed, M, n_immovable)
        for m in methods:
            results[m.name][n] = run_suite(m, suite, seed, t_max, log)
    return Comparison(names, list(sizes), results)


def load_baselines() -> dict:
    return json.loads(BASELINES_PATH.read_text())


# ---------------------------------------------------------------------------
# scenario files

_POSE_KEYS = ("x", "y")
_RECT_KEYS = ("x", "y", "w", "h")


def _require_int(d, key, where):
    if not isinstance(d, dict):
        raise ParseError("expected an object", where)
    if key not in d:
        raise ParseError("missing field", f"{where}.{key}")
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ParseError(f"expected an integer, got {v!r}", f"{where}.{key}")
    return v


def _check_scenario_dict(d, where: str) -> None:
    if not isinstance(d, dict):
        raise ParseError("expected an object", where)
    for key in ("M", "objects", "initial", "target"):
        if key not in d:
            raise ParseError("missing field", f"{where}.{key}")
    _require_int(d, "M", where)
    for key in ("objects", "initial", "target", "immovable"):
        if key in d and not isinstance(d[key], list):
            raise ParseError("expected a list", f"{where}.{key}")
    for i, o in enumerate(d["objects"]):
        _require_int(o, "id", f"{where}.objects[{i}]")
        for k in ("w", "h"):
            if k in o:
                _require_int(o, k, f"{where}.objects[{i}]")
        if "movable" in o and not isinstance(o["movable"], bool):
            raise ParseError("expected a boolean", f"{where}.objects[{i}].movable")
    for name in ("initial", "target"):
        for i, p in enumerate(d[name]):
            if p is None and name == "target":
                continue
            for k in _POSE_KEYS:
                _require_int(p, k, f"{where}.{name}[{i}]")
            if "phi" in p:
                _require_int(p, "phi", f"{where}.{name}[{i}]")
    for i, r in enumerate(d.get("immovable", [])):
        for k in _RECT_KEYS:
            _require_int(r, k, f"{where}.immovable[{i}]")
    if "n_objects" in d:
        n = _require_int(d, "n_objects", where)
        movable = sum(1 for o in d["objects"] if o.get("movable", True))
        if n != movable:
            raise ParseError(f"{n} does not match {movable} movable objects", f"{where}.n_objects")


def scenarios_to_text(scenarios: Sequence[gw.Scenario]) -> str:
    doc = {"schema": SCENARIO_SCHEMA, "scenarios": [sc.to_dict() for sc in scenarios]}
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def scenarios_from_text(text: str) -> List[gw.Scenario]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(e.msg, "document", e.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("expected an object", "document")
    if doc.get("schema") != SCENARIO_SCHEMA:
        raise ParseError(f"unsupported schema {doc.get('schema')!r}", "schema")
    items = doc.get("scenarios")
    if not isinstance(items, list):
        raise ParseError("expected a list", "scenarios")
    out = []
    for i, d in enumerate(items):
        where = f"scenarios[{i}]"
        _check_scenario_dict(d, where)
        try:
            out.append(gw.scenario_from_dict(d))
        except gw.ScenarioError as e:
            raise ParseError(str(e), where) from None
    return out


def scenario_io(path, mode: str = "r", scenarios: Optional[Sequence[gw.Scenario]] = None):
    """Read (``mode="r"``) or write (``mode="w"``) a versioned scenario file."""
    path = Path(path)
    if mode == "r":
        return scenarios_from_text(path.read_text())
    if mode == "w":
        if scenarios is None:
            raise ValueError("nothing to write")
        path.write_text(scenarios_to_text(scenarios))
        return path
    raise ValueError(f"mode must be 'r' or 'w', got {mode!r}")


def scenario_checksum(scenarios: Sequence[gw.Scenario]) -> str:
    return hashlib.sha256(scenarios_to_text(scenarios).encode()).hexdigest()


def rows_to_csv_text(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf).writerows(rows)
    return buf.getvalue()
