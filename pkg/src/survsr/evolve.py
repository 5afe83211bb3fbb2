"""NSGA-2 over multi-expression Cox models (maximize CI, minimize dims)."""

from __future__ import annotations

import json
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import coxcore
from .data import SurvivalDataset
from .exprtree import (
    DEFAULT_MAX_NODES,
    mutate_constants,
    node_level_crossover,
    node_level_mutation,
    random_tree,
    subtree_crossover,
    subtree_mutation,
)
from .metrics import FrontPoint, HVConfig, ParetoFront, hypervolume_points
from .multimodel import (
    MultiExprModel,
    ObjectiveVector,
    construct_features,
    fit_theta_matrix,
    risk_score,
    signature_of_scores,
)

log = logging.getLogger(__name__)

OPERATORS = ("add_expr", "del_expr", "expr_xover", "subtree_xover", "node_xover", "subtree_mut", "node_mut")


def _default_op_probs():
    return {"add_expr": 0.05, "del_expr": 0.05, "expr_xover": 0.10, "subtree_xover": 0.10,
            "node_xover": 0.25, "subtree_mut": 0.25, "node_mut": 0.25}


@dataclass
class EvolutionConfig:
    pop_size: int = 1000
    generations: int = 100
    tournament_size: int = 4
    max_nodes: int = DEFAULT_MAX_NODES
    init_trees_min: int = 1
    init_trees_max: int = 4
    op_probs: dict = field(default_factory=_default_op_probs)
    const_mut_offspring_frac: float = 0.90
    const_mut_node_prob: float = 0.5
    temperature: float = 0.1
    theta_lambda: float = 1e-6
    theta_l1_ratio: float = 0.5
    seed: int = 0
    n_jobs: int = 1

    def __post_init__(self):
        probs = list(self.op_probs.values()) + [self.const_mut_offspring_frac, self.const_mut_node_prob]
        if set(self.op_probs) != set(OPERATORS):
            raise ValueError(f"op_probs must name exactly {OPERATORS}")
        if any(not 0 <= p <= 1 for p in probs):
            raise ValueError("probabilities must lie in [0, 1]")
        if self.pop_size < 2 or self.pop_size % 2:
            raise ValueError("pop_size must be even and >= 2")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        if not 1 <= self.init_trees_min <= self.init_trees_max:
            raise ValueError("need 1 <= init_trees_min <= init_trees_max")

    def to_dict(self):
        return asdict(self)


@dataclass
class Individual:
    model: MultiExprModel
    objectives: ObjectiveVector
    signature: bytes
    front_rank: int = 0
    crowding: float = 0.0
    duplicate: bool = False

    @property
    def ci(self) -> float:
        return 1.0 - self.objectives.neg_ci


# ---------------------------------------------------------------------------
# sorting and selection


def nondominated_sort(objs) -> list[list[int]]:
    """Pareto fronts (lists of indices) for minimization of every column."""
    objs = np.asarray(objs, dtype=float)
    n = len(objs)
    if n == 0:
        return []
    le = np.all(objs[:, None, :] <= objs[None, :, :], axis=2)
    lt = np.any(objs[:, None, :] < objs[None, :, :], axis=2)
    dom = le & lt  # dom[i, j]: i dominates j
    n_dominators = dom.sum(axis=0)
    fronts = []
    current = np.flatnonzero(n_dominators == 0)
    while current.size:
        fronts.append(current.tolist())
        n_dominators = n_dominators - dom[current].sum(axis=0)
        n_dominators[current] = -1
        current = np.flatnonzero(n_dominators == 0)
    return fronts


def crowding_distance(objs) -> np.ndarray:
    """Crowding distance within one front; boundary points get +inf."""
    objs = np.asarray(objs, dtype=float)
    n, k = objs.shape
    dist = np.zeros(n)
    if n <= 2:
        dist[:] = np.inf
        return dist
    for j in range(k):
        order = np.argsort(objs[:, j], kind="stable")
        col = objs[order, j]
        dist[order[0]] = dist[order[-1]] = np.inf
        span = col[-1] - col[0]
        if span > 0:
            dist[order[1:-1]] += (col[2:] - col[:-2]) / span
    return dist


def assign_ranks(pop: list[Individual]) -> None:
    objs = [ind.objectives.as_tuple() for ind in pop]
    for rank, front in enumerate(nondominated_sort(objs)):
        crowd = crowding_distance([objs[i] for i in front])
        for i, c in zip(front, crowd):
            pop[i].front_rank = rank
            pop[i].crowding = float(c)
            pop[i].duplicate = False


def _better(a: Individual, b: Individual) -> bool:
    return a.front_rank < b.front_rank or (a.front_rank == b.front_rank and a.crowding > b.crowding)


def penalize_duplicates(pop: list[Individual]) -> list[Individual]:
    """Demote all but the best member of every signature class past the last front.

    Crowding distances are recomputed per front afterwards.
    """
    if not pop:
        return pop
    best: dict[bytes, int] = {}
    for i, ind in enumerate(pop):
        j = best.get(ind.signature)
        if j is None or _better(ind, pop[j]):
            best[ind.signature] = i
    worst = max(ind.front_rank for ind in pop)
    keep = set(best.values())
    for i, ind in enumerate(pop):
        if i not in keep:
            ind.front_rank = worst + 1
            ind.duplicate = True
    by_rank: dict[int, list[int]] = {}
    for i, ind in enumerate(pop):
        by_rank.setdefault(ind.front_rank, []).append(i)
    for members in by_rank.values():
        crowd = crowding_distance([pop[i].objectives.as_tuple() for i in members])
        for i, c in zip(members, crowd):
            pop[i].crowding = float(c)
    return pop


def tournament_select(pop: list[Individual], rng: np.random.Generator, size: int = 4) -> Individual:
    """Crowded-comparison tournament, sampling with replacement; ties broken uniformly."""
    picks = rng.integers(len(pop), size=size)
    keys = [(pop[i].front_rank, -pop[i].crowding) for i in picks]
    best = min(keys)
    winners = [i for i, k in zip(picks, keys) if k == best]
    return pop[winners[int(rng.integers(len(winners)))]] if len(winners) > 1 else pop[winners[0]]


def survivor_select(pool: list[Individual], n: int) -> list[Individual]:
    order = sorted(range(len(pool)), key=lambda i: (pool[i].front_rank, -pool[i].crowding, i))
    return [pool[i] for i in order[:n]]


# ---------------------------------------------------------------------------
# variation


def choose_operator(rng: np.random.Generator, op_probs: dict) -> str | None:
    """Visit operators in random order; the first whose coin lands is applied."""
    for k in rng.permutation(len(OPERATORS)):
        name = OPERATORS[k]
        if rng.random() < op_probs[name]:
            return name
    return None


def effective_operator_rates(op_probs: dict) -> dict:
    """Exact firing rate of each operator under the random-order scheme."""
    from itertools import permutations

    rates = dict.fromkeys(OPERATORS, 0.0)
    perms = list(permutations(OPERATORS))
    for perm in perms:
        survive = 1.0
        for name in perm:
            rates[name] += survive * op_probs[name] / len(perms)
            survive *= 1.0 - op_probs[name]
    return rates


def random_model(rng, d, binary_columns, config: EvolutionConfig) -> MultiExprModel:
    m = int(rng.integers(config.init_trees_min, config.init_trees_max + 1))
    return MultiExprModel(tuple(random_tree(rng, d, config.max_nodes, binary_columns) for _ in range(m)))


def apply_operator(op, parent: MultiExprModel, donor: MultiExprModel, rng, d, binary_columns,
                   max_nodes=DEFAULT_MAX_NODES) -> tuple:
    trees = list(parent.trees)
    if op == "add_expr":
        trees.append(random_tree(rng, d, max_nodes, binary_columns))
    elif op == "del_expr":
        if len(trees) > 1:
            del trees[int(rng.integers(len(trees)))]
    elif op == "expr_xover":
        trees[int(rng.integers(len(trees)))] = donor.trees[int(rng.integers(donor.m))]
    else:
        i = int(rng.integers(len(trees)))
        if op == "subtree_xover":
            trees[i] = subtree_crossover(trees[i], donor.trees[int(rng.integers(donor.m))], rng, max_nodes)
        elif op == "node_xover":
            trees[i] = node_level_crossover(trees[i], donor.trees[int(rng.integers(donor.m))], rng)
        elif op == "subtree_mut":
            trees[i] = subtree_mutation(trees[i], rng, d, binary_columns, max_nodes)
        elif op == "node_mut":
            trees[i] = node_level_mutation(trees[i], rng, d, binary_columns)
        else:
            raise ValueError(f"unknown operator {op!r}")
    return tuple(trees)


def vary_with_info(parent: MultiExprModel, donor: MultiExprModel, rng, config: EvolutionConfig,
                   d: int, binary_columns=()) -> tuple[MultiExprModel, str | None]:
    op = choose_operator(rng, config.op_probs)
    trees = parent.trees if op is None else apply_operator(op, parent, donor, rng, d, binary_columns,
                                                           config.max_nodes)
    if rng.random() < config.const_mut_offspring_frac:
        trees = tuple(mutate_constants(t, rng, config.temperature, config.const_mut_node_prob) for t in trees)
    if tuple(t.nodes for t in trees) == parent.key:
        return parent, op
    return MultiExprModel(trees), op


def vary(parent, donor, rng, config: EvolutionConfig, d: int, binary_columns=()) -> MultiExprModel:
    """One offspring: at most one structural operator, then (maybe) constant mutation.

    The offspring is unfitted unless nothing changed, in which case the
    parent itself is returned.
    """
    return vary_with_info(parent, donor, rng, config, d, binary_columns)[0]


# ---------------------------------------------------------------------------
# evaluation


class TrainingEvaluator:
    """Fits theta and scores models on one training split. Holds no RNG."""

    CACHE_LIMIT = 200_000

    def __init__(self, train: SurvivalDataset, lam=1e-6, l1_ratio=0.5):
        if not train.events.any():
            raise ValueError("training data needs at least one event")
        self.train = train
        self.lam = lam
        self.l1_ratio = l1_ratio
        self.risk_sets = coxcore.RiskSets(train.times, train.events)
        self.concordance = coxcore.IPCWConcordance(train.times, train.events, train.times, train.events)
        self.signature = train.signature()
        self._cache: dict = {}

    def __call__(self, model: MultiExprModel) -> Individual:
        if len(self._cache) > self.CACHE_LIMIT:
            self._cache.clear()
        F, zero_var = construct_features(model, self.train.features, self._cache)
        if model.fitted and model.train_signature == self.signature:
            theta, converged = model.theta, model.converged
        else:
            theta, converged = fit_theta_matrix(F, zero_var, self.train.times, self.train.events,
                                                self.lam, self.l1_ratio, self.risk_sets)
            model = MultiExprModel(model.trees, theta, True, converged, self.signature)
        eta = F @ theta
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", coxcore.NoComparablePairs)
            ci = self.concordance(eta)
        return Individual(model, ObjectiveVector(1.0 - min(max(ci, 0.0), 1.0), model.dims),
                          signature_of_scores(eta))

    def evaluate_all(self, models, n_jobs=1) -> list[Individual]:
        if n_jobs > 1 and len(models) > 1:
            with ThreadPoolExecutor(n_jobs) as pool:
                return list(pool.map(self, models))
        return [self(m) for m in models]


# ---------------------------------------------------------------------------
# main loop


@dataclass
class GenerationLog:
    generation: int
    archive_hv: float
    best_ci_by_dims: dict


@dataclass
class EvolutionResult:
    population: list
    archive: list
    history: list
    n_features: int

    def front(self, split="train", eval_ds=None, train_ds=None, source="archive", method="sr") -> ParetoFront:
        """Front of archive (or final population) models, scored on train or on ``eval_ds``."""
        inds = self.archive if source == "archive" else nondominated(self.population)
        pts = []
        for ind in inds:
            if eval_ds is None:
                ci = ind.ci
            else:
                ci = coxcore.concordance_ipcw(train_ds.times, train_ds.events, eval_ds.times,
                                              eval_ds.events, risk_score(ind.model, eval_ds.features))
            pts.append(FrontPoint(ind.model.dims, ci, ind.model, ind.model.m))
        return ParetoFront.from_candidates(pts, split, method)


def nondominated(inds: list[Individual]) -> list[Individual]:
    objs = [i.objectives.as_tuple() for i in inds]
    if not objs:
        return []
    first = nondominated_sort(objs)[0]
    out, seen = [], set()
    for i in sorted(first, key=lambda i: (objs[i][1], objs[i][0], i)):
        if objs[i] not in seen:
            seen.add(objs[i])
            out.append(inds[i])
    return out


def _update_archive(archive: dict, inds: list[Individual]) -> None:
    for ind in inds:
        cur = archive.get(ind.objectives.dims)
        if cur is None or ind.objectives.neg_ci < cur.objectives.neg_ci:
            archive[ind.objectives.dims] = ind


def archive_hv(archive: list[Individual], n_features: int) -> float:
    pts = [[i.objectives.neg_ci, i.objectives.dims / max(n_features, 1)] for i in archive]
    return HVConfig(n_features).scale * hypervolume_points(pts) if pts else 0.0


def evolve(train: SurvivalDataset, config: EvolutionConfig, eval_ds: SurvivalDataset | None = None,
           on_generation: Callable | None = None, checkpoint_dir: str | Path | None = None) -> EvolutionResult:
    """Run NSGA-2 on training objectives only.

    ``eval_ds`` is never used for selection; it is accepted so callers can
    score the final archive with :meth:`EvolutionResult.front`.
    ``on_generation(gen, population, offspring, archive)`` is called after
    initialization (gen 0, offspring empty) and after every generation.
    """
    del eval_ds  # selection never sees held-out data
    rng = np.random.default_rng(config.seed)
    d = train.d
    binary = frozenset(train.binary_columns)
    evaluator = TrainingEvaluator(train, config.theta_lambda, config.theta_l1_ratio)

    pop = evaluator.evaluate_all([random_model(rng, d, binary, config) for _ in range(config.pop_size)],
                                 config.n_jobs)
    assign_ranks(pop)
    penalize_duplicates(pop)
    archive: dict = {}
    _update_archive(archive, pop)
    history = []

    def log_generation(gen, offspring):
        front = nondominated(list(archive.values()))
        hv = archive_hv(front, d)
        best = {i.objectives.dims: round(i.ci, 6) for i in front}
        history.append(GenerationLog(gen, hv, best))
        log.info("gen %d archive_hv %.4f best_ci_by_dims %s", gen, hv, best)
        if checkpoint_dir is not None:
            _write_checkpoint(Path(checkpoint_dir), gen, pop, front, train.column_names)
        if on_generation is not None:
            on_generation(gen, pop, offspring, front)

    log_generation(0, [])
    for gen in range(1, config.generations + 1):
        children = []
        for _ in range(config.pop_size):
            parent = tournament_select(pop, rng, config.tournament_size)
            donor = tournament_select(pop, rng, config.tournament_size)
            children.append(vary(parent.model, donor.model, rng, config, d, binary))
        offspring = evaluator.evaluate_all(children, config.n_jobs)
        _update_archive(archive, offspring)
        pool = pop + offspring
        assign_ranks(pool)
        penalize_duplicates(pool)
        pop = survivor_select(pool, config.pop_size)
        log_generation(gen, offspring)

    return EvolutionResult(pop, nondominated(list(archive.values())), history, d)


def _write_checkpoint(directory: Path, gen: int, pop, archive, column_names) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = {
        "generation": gen,
        "population_signatures": [ind.signature.hex() for ind in pop],
        "archive": [{"ci": ind.ci, "dims": ind.objectives.dims, "model": ind.model.to_json(column_names)}
                    for ind in archive],
    }
    (directory / f"gen_{gen:04d}.json").write_text(json.dumps(payload, indent=1))
