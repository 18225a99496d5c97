"""
Experiment orchestration: evaluation cells over tasks, policy variants,
demonstration counts and randomisation profiles, with exact binomial
statistics and JSON/Markdown reports.

Every policy in a spec is evaluated on the same reset seeds per episode
index, so cells of one spec are paired.
"""
import asyncio
import itertools
import json
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

from scipy import stats

from controller import EpisodeController, EpisodeResult
from dataset import DemoDataset, RetrievalBatch, flatten, subset
from db import ResultsStore
from errors import ConfigurationError, DataError
from gcbc import GCBCModel, gcbc_train_from_config
from helper import config_hash, episode_seed, merge_config, render
from policy import POLICY_VARIANTS, MotionPolicy, make_policy
from reachability import StateGraph, ValueTable, build_graph, value_iteration
from state import TASKS, EnvConfig
from subgoal import SubgoalSelector
from surrogate_env import ObservationModel, gen_demos

REPORT_FORMAT = 'demobot-report'
REPORT_VERSION = 1
EXPERIMENT_KINDS = ('baseline', 'data_efficiency', 'generalization', 'motion_ablation')

# Evaluation-time EnvConfig overrides; demonstrations always come from the unrandomised setting
PROFILES: Dict[str, Dict[str, Any]] = {
    'none': {},
    'material': {
        'hues': (36.0, 108.0, 180.0, 252.0, 324.0),
        'rest_scale_range': (0.95, 1.05),
        'max_strain_range': (0.08, 0.2),
    },
    'position': {
        'distance_range': (1.5, 3.0),
        'lateral_max': 2.0,
        'heading_dev_deg': 20.0,
    },
    'size-S': {'curtain_width': 0.8},
    'size-L': {'curtain_width': 1.6},
}


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    kind: str
    tasks: Tuple[str, ...]
    policies: Tuple[str, ...]
    demo_counts: Tuple[int, ...] = (20,)
    profiles: Tuple[str, ...] = ('none',)
    episodes: int = 20
    max_steps: int = 500
    seed: int = 0
    demo_seed: int = 0
    config: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ('tasks', 'policies', 'demo_counts', 'profiles'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigurationError(f"unknown experiment kind '{self.kind}', expected one of {EXPERIMENT_KINDS}")
        checks = [('tasks', TASKS), ('policies', POLICY_VARIANTS), ('profiles', tuple(PROFILES))]
        for name, allowed in checks:
            values = getattr(self, name)
            if not values:
                raise ConfigurationError(f"experiment '{self.name}' lists no {name}")
            unknown = [v for v in values if v not in allowed]
            if unknown:
                raise ConfigurationError(f"experiment '{self.name}': unknown {name} {unknown}")
        if not self.demo_counts or any(n < 1 for n in self.demo_counts):
            raise ConfigurationError(f"experiment '{self.name}': demo counts must be >= 1")
        if self.episodes < 1:
            raise ConfigurationError(f"experiment '{self.name}': episodes must be >= 1, got {self.episodes}")
        if self.max_steps < 1:
            raise ConfigurationError(f"experiment '{self.name}': max_steps must be >= 1, got {self.max_steps}")

    def cells(self) -> List['CellKey']:
        return [CellKey(task, policy, n, profile)
                for task, profile, n, policy in itertools.product(self.tasks, self.profiles,
                                                                  self.demo_counts, self.policies)]

    def seeds(self, profile: str) -> List[int]:
        block = self.profiles.index(profile)
        return [episode_seed(self.seed, block, i) for i in range(self.episodes)]

    @classmethod
    def from_dict(cls, document: Dict[str, Any], defaults: Optional[Dict[str, Any]] = None) -> 'ExperimentSpec':
        """Missing episodes, max_steps and demo_seed fall back to the harness config section."""
        defaults = defaults or {}
        known = {'name', 'kind', 'tasks', 'policies', 'demo_counts', 'profiles', 'episodes', 'max_steps',
                 'seed', 'demo_seed', 'config'}
        unknown = set(document) - known
        if unknown:
            raise ConfigurationError(f"unknown experiment keys {sorted(unknown)}")
        values = dict(document)
        for key in ('episodes', 'max_steps', 'demo_seed'):
            if key not in values and key in defaults:
                values[key] = defaults[key]
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigurationError(f"incomplete experiment spec: {e}") from e


def load_spec(path: str, defaults: Optional[Dict[str, Any]] = None) -> ExperimentSpec:
    try:
        with open(path, encoding='utf-8') as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise DataError("file not found", path=path) from e
    except ValueError as e:
        raise DataError(f"malformed experiment spec ({e})", path=path) from e
    if not isinstance(document, dict):
        raise DataError("experiment spec must be a JSON object", path=path)
    return ExperimentSpec.from_dict(document, defaults)


@dataclass(frozen=True)
class CellKey:
    task: str
    policy: str
    demos: int
    profile: str


def clopper_pearson(successes: int, trials: int, alpha: float = 0.05) -> Tuple[float, float]:
    """Exact two-sided binomial interval from beta quantiles."""
    if trials < 1 or not 0 <= successes <= trials:
        raise DataError(f"invalid binomial counts {successes}/{trials}")
    low = 0.0 if successes == 0 else float(stats.beta.ppf(alpha / 2, successes, trials - successes + 1))
    high = 1.0 if successes == trials else float(stats.beta.ppf(1 - alpha / 2, successes + 1, trials - successes))
    return low, high


@dataclass
class CellResult:
    task: str
    policy: str
    demos: int
    profile: str
    episodes: int
    successes: int
    lengths: List[int] = field(default_factory=list)
    outcomes: List[bool] = field(default_factory=list)
    seeds: List[int] = field(default_factory=list)
    fallback_rate: float = 0.0
    wall_clock: Optional[float] = None

    def __post_init__(self):
        if not 0 <= self.successes <= self.episodes:
            raise DataError(f"cell {self.key}: {self.successes} successes out of {self.episodes} episodes")

    @property
    def key(self) -> CellKey:
        return CellKey(self.task, self.policy, self.demos, self.profile)

    @property
    def rate(self) -> float:
        return self.successes / self.episodes

    @property
    def ci(self) -> Tuple[float, float]:
        return clopper_pearson(self.successes, self.episodes)

    @property
    def mean_success_length(self) -> Optional[float]:
        lengths = [n for n, ok in zip(self.lengths, self.outcomes) if ok]
        return sum(lengths) / len(lengths) if lengths else None

    @classmethod
    def from_episodes(cls, key: CellKey, results: Sequence[EpisodeResult],
                      wall_clock: Optional[float] = None) -> 'CellResult':
        decisions = sum(len(r.decisions) for r in results)
        fallbacks = sum(r.fallback_count for r in results)
        return cls(key.task, key.policy, key.demos, key.profile, len(results),
                   sum(1 for r in results if r.success),
                   [r.steps for r in results], [r.success for r in results], [r.seed for r in results],
                   fallbacks / decisions if decisions else 0.0, wall_clock)

    def to_record(self) -> Dict[str, Any]:
        low, high = self.ci
        record = {
            "task": self.task,
            "policy": self.policy,
            "demos": self.demos,
            "profile": self.profile,
            "episodes": self.episodes,
            "successes": self.successes,
            "rate": self.rate,
            "ci": [low, high],
            "lengths": self.lengths,
            "outcomes": self.outcomes,
            "seeds": self.seeds,
            "mean_success_length": self.mean_success_length,
            "fallback_rate": self.fallback_rate,
        }
        if self.wall_clock is not None:
            record["wall_clock"] = self.wall_clock
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> 'CellResult':
        return cls(record['task'], record['policy'], record['demos'], record['profile'], record['episodes'],
                   record['successes'], list(record.get('lengths', [])), list(record.get('outcomes', [])),
                   list(record.get('seeds', [])), record.get('fallback_rate', 0.0), record.get('wall_clock'))


def significance(a: CellResult, b: CellResult) -> float:
    """Two-sided Fisher exact test on the 2x2 success/failure table of two cells."""
    if a.episodes != b.episodes:
        raise DataError(f"cannot compare cells with {a.episodes} and {b.episodes} episodes")
    table = [[a.successes, a.episodes - a.successes], [b.successes, b.episodes - b.successes]]
    _, p_value = stats.fisher_exact(table, alternative='two-sided')
    return min(1.0, float(p_value))


@dataclass
class ResultTable:
    name: str
    kind: str
    config_hash: str
    config: Dict[str, Any] = field(default_factory=dict)
    cells: List[CellResult] = field(default_factory=list)

    def cell(self, task: str, policy: str, demos: int, profile: str = 'none') -> CellResult:
        key = CellKey(task, policy, demos, profile)
        for cell in self.cells:
            if cell.key == key:
                return cell
        raise DataError(f"no cell {key}")

    def comparisons(self) -> List[Dict[str, Any]]:
        """Pairwise policy comparisons per (task, demos, profile) group, with CI overlap."""
        groups: Dict[Tuple[str, int, str], List[CellResult]] = {}
        for cell in self.cells:
            groups.setdefault((cell.task, cell.demos, cell.profile), []).append(cell)
        rows = []
        for (task, demos, profile), cells in groups.items():
            for a, b in itertools.combinations(cells, 2):
                rows.append({"task": task, "demos": demos, "profile": profile,
                             "a": a.policy, "b": b.policy, "p_value": significance(a, b),
                             "ci_overlap": a.ci[0] <= b.ci[1] and b.ci[0] <= a.ci[1]})
        return rows

    def to_dict(self) -> Dict[str, Any]:
        return {
            "format": REPORT_FORMAT,
            "version": REPORT_VERSION,
            "name": self.name,
            "kind": self.kind,
            "config_hash": self.config_hash,
            "config": self.config,
            "ci_method": "clopper-pearson 95%",
            "test_method": "fisher exact, two-sided",
            "cells": [cell.to_record() for cell in self.cells],
            "comparisons": self.comparisons(),
        }


def render_markdown(table: ResultTable) -> str:
    return render('report.md.j2', {"report": table.to_dict()})


def emit_report(table: ResultTable, path: str, markdown_path: Optional[str] = None) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(table.to_dict(), f, sort_keys=True, indent=2)
        f.write('\n')
    if markdown_path:
        with open(markdown_path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(render_markdown(table))
    logging.getLogger('demobot').info(f"Wrote report '{table.name}' with {len(table.cells)} cells to {path}")


def parse_report(path: str) -> ResultTable:
    try:
        with open(path, encoding='utf-8') as f:
            document = json.load(f)
    except FileNotFoundError as e:
        raise DataError("file not found", path=path) from e
    except ValueError as e:
        raise DataError(f"malformed report ({e})", path=path) from e
    if not isinstance(document, dict) or document.get('format') != REPORT_FORMAT:
        raise DataError(f"not a {REPORT_FORMAT} file", path=path)
    try:
        cells = [CellResult.from_record(record) for record in document['cells']]
        return ResultTable(document['name'], document['kind'], document['config_hash'],
                           document.get('config', {}), cells)
    except (KeyError, TypeError) as e:
        raise DataError(f"malformed report record ({e})", path=path) from e


@dataclass
class Artifacts:
    """Everything a policy needs for one (task, demo count) pair; immutable once built."""
    dataset: DemoDataset
    batch: RetrievalBatch
    graph: StateGraph
    table: ValueTable
    model: Optional[GCBCModel] = None


class ExperimentRunner:

    def __init__(self, config: Dict[str, Any], logger, store: Optional[ResultsStore] = None):
        self._config = config
        self._logger = logger
        self._store = store
        self._demos: Dict[str, DemoDataset] = {}
        self._artifacts: Dict[Tuple[str, int], Artifacts] = {}
        self._controller = EpisodeController(logger, config)

    def _env_config(self, task: str, profile: str = 'none') -> EnvConfig:
        return EnvConfig.from_dict(self._config['env'], task).replace(**PROFILES[profile])

    def _demonstrations(self, spec: ExperimentSpec, task: str) -> DemoDataset:
        if task not in self._demos:
            count = max(spec.demo_counts)
            self._logger.info(f"Generating {count} {task} demonstrations (seed {spec.demo_seed})")
            self._demos[task] = gen_demos(task, count, self._env_config(task), spec.demo_seed,
                                          logger=self._logger)
        return self._demos[task]

    def _prepare(self, spec: ExperimentSpec, task: str, demos: int, need_model: bool) -> Artifacts:
        key = (task, demos)
        if key not in self._artifacts:
            dataset = subset(self._demonstrations(spec, task), demos)
            section = self._config['reachability']
            graph = build_graph(dataset, section['merge_eps'], section['metric'], section['merge_eps_factor'])
            table = value_iteration(graph, section['gamma'], section['tol'])
            self._artifacts[key] = Artifacts(dataset, flatten(dataset), graph, table)
        artifacts = self._artifacts[key]
        if need_model and artifacts.model is None:
            self._logger.info(f"Training GCBC for {task} with {demos} demonstrations")
            artifacts.model = gcbc_train_from_config(artifacts.dataset, self._config)
        return artifacts

    def _policy(self, variant: str, artifacts: Artifacts) -> MotionPolicy:
        selector = SubgoalSelector.from_config(artifacts.dataset, artifacts.batch, artifacts.graph,
                                               artifacts.table, self._config, self._logger)
        return make_policy(variant, selector, artifacts.model, self._config['policy']['valued_aggregation'],
                           self._config['subgoal']['patience'])

    async def _run_cell(self, spec: ExperimentSpec, key: CellKey,
                        semaphore: asyncio.Semaphore) -> Tuple[CellResult, List[EpisodeResult]]:
        artifacts = await asyncio.to_thread(self._prepare, spec, key.task, key.demos,
                                            key.policy == 'demobot+gcbc')
        env_config = self._env_config(key.task, key.profile)
        model = ObservationModel.from_config(env_config)
        self._logger.info(f"Cell {key.task}/{key.policy}/n={key.demos}/{key.profile}: "
                          f"{spec.episodes} episodes")

        async def episode(seed: int) -> EpisodeResult:
            async with semaphore:
                policy = self._policy(key.policy, artifacts)
                return await asyncio.to_thread(self._controller.run_episode, policy, env_config, seed,
                                               spec.max_steps, model)

        started = time.perf_counter()
        results = await asyncio.gather(*(episode(seed) for seed in spec.seeds(key.profile)))
        elapsed = time.perf_counter() - started
        timing = elapsed if self._config['harness']['include_timing'] else None
        cell = CellResult.from_episodes(key, results, timing)
        self._logger.info(f"Cell {key.task}/{key.policy}/n={key.demos}/{key.profile}: "
                          f"{cell.successes}/{cell.episodes} successes")
        return cell, list(results)

    async def run(self, spec: ExperimentSpec) -> ResultTable:
        semaphore = asyncio.Semaphore(max(1, self._config['harness']['workers']))
        digest = config_hash(self._config)
        cells: List[CellResult] = []
        episode_records: List[Dict[str, Any]] = []
        # Cells run in order so demonstrations and graphs are built once and shared
        for index, key in enumerate(spec.cells()):
            try:
                cell, results = await self._run_cell(spec, key, semaphore)
            except Exception as e:
                self._logger.error(f"Experiment '{spec.name}' failed in cell {key}: {e}", exc_info=True)
                raise
            cells.append(cell)
            records = [dict(result.to_record(), cell=index, episode=number, task=key.task, policy=key.policy,
                            demos=key.demos, profile=key.profile)
                       for number, result in enumerate(results)]
            episode_records.extend(records)
            if self._store is not None:
                await self._store.log_cell(spec.name, digest, index, cell.to_record(), records)

        log_path = self._config['harness']['episode_log']
        if log_path:
            write_episode_log(episode_records, log_path)
        return ResultTable(spec.name, spec.kind, digest, self._config, cells)


def write_episode_log(records: Sequence[Dict[str, Any]], path: str) -> None:
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + '\n')


def effective_config(config: Dict[str, Any], spec: ExperimentSpec) -> Dict[str, Any]:
    """Base config with the experiment's own overrides applied."""
    return merge_config(config, spec.config) if spec.config else config


async def _run_with_store(spec: ExperimentSpec, config: Dict[str, Any], logger) -> ResultTable:
    store = None
    if config['harness']['database']:
        store = ResultsStore(logger, config)
        await store.init_tables()
    try:
        return await ExperimentRunner(config, logger, store).run(spec)
    finally:
        if store is not None:
            await store.close()


def run_experiment(spec: ExperimentSpec, config: Dict[str, Any], logger=None) -> ResultTable:
    logger = logger or logging.getLogger('demobot')
    config = effective_config(config, spec)
    logger.info(f"Running experiment '{spec.name}' ({spec.kind}): {len(spec.cells())} cells, "
                f"config {config_hash(config)}")
    return asyncio.run(_run_with_store(spec, config, logger))
