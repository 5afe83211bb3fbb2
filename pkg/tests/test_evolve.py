import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from survsr import evolve as ev
from survsr.exprtree import Constant, ExprTree, Feature, traversal_features
from survsr.multimodel import MultiExprModel, ObjectiveVector
from survsr.synth import SynthSpec, generate

from oracles import brute_fronts

seeds = st.integers(0, 2**32 - 1)


def ind(neg_ci, dims, sig=None, rank=0, crowd=0.0):
    m = MultiExprModel((ExprTree((Constant(0.0),)),))
    return ev.Individual(m, ObjectiveVector(neg_ci, dims), sig if sig is not None else bytes([dims]) + str(neg_ci).encode(),
                         rank, crowd)


def test_sort_examples():
    assert ev.nondominated_sort([(0.3, 1), (0.2, 2), (0.1, 3)]) == [[0, 1, 2]]
    # (0.2, 1) is better in both objectives than (0.3, 2)
    assert ev.nondominated_sort([(0.2, 1), (0.3, 2), (0.1, 3)]) == [[0, 2], [1]]
    assert ev.nondominated_sort([(0.2, 1), (0.3, 1)]) == [[0], [1]]
    assert ev.nondominated_sort([]) == []


@given(seeds)
def test_sort_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 50))
    objs = np.column_stack([np.round(rng.random(n), 1), rng.integers(0, 5, n)])
    assert [sorted(f) for f in ev.nondominated_sort(objs)] == brute_fronts(objs)


def test_crowding_boundaries():
    d = ev.crowding_distance([(0.1, 3), (0.2, 2), (0.3, 1)])
    assert np.isinf(d[0]) and np.isinf(d[2]) and np.isfinite(d[1]) and d[1] == pytest.approx(2.0)


def test_tournament_examples(rng):
    only = ind(0.3, 1)
    assert ev.tournament_select([only], rng) is only
    a, b = ind(0.3, 1, rank=0), ind(0.4, 2, rank=1)
    pop = [a] + [b] * 5
    for _ in range(50):
        winner = ev.tournament_select(pop, rng)
        assert winner is b or winner is a
    wins = sum(ev.tournament_select([a, b], np.random.default_rng(s)) is a for s in range(200))
    assert wins > 150
    c, e = ind(0.3, 1, crowd=np.inf), ind(0.35, 1, crowd=0.1)
    sample = [e, c, e, e]

    class Fixed:
        def integers(self, n, size=None):
            return np.array([0, 1, 0, 0]) if size else 0

    assert ev.tournament_select(sample, Fixed()) is c


def test_penalize_duplicates():
    unique = [ind(0.1 * k, k) for k in range(4)]
    ev.assign_ranks(unique)
    before = [(i.front_rank, i.crowding) for i in unique]
    ev.penalize_duplicates(unique)
    assert [(i.front_rank, i.crowding) for i in unique] == before and not any(i.duplicate for i in unique)

    pop = [ind(0.2, 1, sig=b"s"), ind(0.2, 1, sig=b"s"), ind(0.1, 3, sig=b"t")]
    ev.assign_ranks(pop)
    worst = max(i.front_rank for i in pop)
    ev.penalize_duplicates(pop)
    assert sorted(i.front_rank for i in pop[:2]) == [0, worst + 1]

    copies = [ind(0.2, 1, sig=b"k") for _ in range(5)] + [ind(0.5, 0, sig=b"z")]
    ev.assign_ranks(copies)
    ev.penalize_duplicates(copies)
    assert sum(not i.duplicate for i in copies[:5]) == 1


def test_survivor_select_size():
    pool = [ind(float(np.random.default_rng(k).random()), k % 4) for k in range(40)]
    ev.assign_ranks(pool)
    assert len(ev.survivor_select(pool, 20)) == 20


def model(*trees):
    return MultiExprModel(tuple(ExprTree((Feature(j),)) for j in trees))


def test_vary_no_op_path(rng):
    cfg = ev.EvolutionConfig(op_probs=dict.fromkeys(ev.OPERATORS, 0.0), const_mut_offspring_frac=0.0)
    parent = MultiExprModel((ExprTree((Feature(0),)),), np.array([1.5]), True)
    child = ev.vary(parent, model(1), rng, cfg, 3)
    assert child is parent and child.fitted


def test_add_and_delete(rng):
    probs = dict.fromkeys(ev.OPERATORS, 0.0)
    add = ev.EvolutionConfig(op_probs=dict(probs, add_expr=1.0), const_mut_offspring_frac=0.0)
    assert ev.vary(model(0, 1, 2, 3), model(1), rng, add, 4).m == 5
    delete = ev.EvolutionConfig(op_probs=dict(probs, del_expr=1.0), const_mut_offspring_frac=0.0)
    assert ev.vary(model(0), model(1), rng, delete, 4).m == 1
    assert ev.vary(model(0, 1), model(1), rng, delete, 4).m == 1


def test_expr_xover_clones_donor_tree(rng):
    probs = dict.fromkeys(ev.OPERATORS, 0.0)
    cfg = ev.EvolutionConfig(op_probs=dict(probs, expr_xover=1.0), const_mut_offspring_frac=0.0)
    child = ev.vary(model(0, 1), model(5), rng, cfg, 6)
    assert ExprTree((Feature(5),)) in child.trees and not child.fitted


def test_operator_rates_monte_carlo():
    cfg = ev.EvolutionConfig()
    rng = np.random.default_rng(9)
    n = 100_000
    counts = dict.fromkeys(list(ev.OPERATORS) + [None], 0)
    for _ in range(n):
        counts[ev.choose_operator(rng, cfg.op_probs)] += 1
    exact = ev.effective_operator_rates(cfg.op_probs)
    for op in ev.OPERATORS:
        assert counts[op] / n == pytest.approx(exact[op], abs=0.01)
    assert counts[None] / n == pytest.approx(1 - sum(exact.values()), abs=0.01)


def test_config_validation():
    with pytest.raises(ValueError):
        ev.EvolutionConfig(pop_size=7)
    with pytest.raises(ValueError):
        ev.EvolutionConfig(op_probs={"add_expr": 1.0})


@pytest.fixture(scope="module")
def small_run():
    ds, _ = generate(SynthSpec("quadratic", n=300, d=5), 3)
    seen = []

    def record(gen, pop, offspring, front):
        seen.append((gen, list(pop), list(offspring)))

    cfg = ev.EvolutionConfig(pop_size=40, generations=6, seed=5)
    return ds, cfg, ev.evolve(ds, cfg, on_generation=record), seen


def test_small_run_invariants(small_run):
    ds, cfg, result, seen = small_run
    hv = [h.archive_hv for h in result.history]
    assert all(b >= a - 1e-12 for a, b in zip(hv, hv[1:]))
    for gen, pop, offspring in seen:
        assert len(pop) == cfg.pop_size
        for i in pop + offspring:
            assert i.model.m >= 1
            assert all(t.size <= 7 for t in i.model.trees)
            assert i.model.dims == len(frozenset().union(*(traversal_features(t) for t in i.model.trees)))
    final = [i.signature for i in result.population]
    assert len(set(final)) == len(final) or len(set(final)) < cfg.pop_size


def test_deterministic_and_parallel(small_run):
    ds, cfg, result, _ = small_run
    again = ev.evolve(ds, cfg)
    threaded = ev.evolve(ds, dataclasses.replace(cfg, n_jobs=3))
    key = [(i.model.key, i.ci) for i in result.archive]
    assert key == [(i.model.key, i.ci) for i in again.archive]
    assert key == [(i.model.key, i.ci) for i in threaded.archive]


def test_generations_zero_archive_is_initial_front():
    ds, _ = generate(SynthSpec("linear", n=200, d=4), 1)
    captured = {}
    result = ev.evolve(ds, ev.EvolutionConfig(pop_size=20, generations=0, seed=1),
                       on_generation=lambda g, pop, off, fr: captured.setdefault("pop", pop))
    assert [i.model.key for i in result.archive] == [i.model.key for i in ev.nondominated(captured["pop"])]


def test_checkpoints(tmp_path):
    ds, _ = generate(SynthSpec("linear", n=200, d=4), 2)
    ev.evolve(ds, ev.EvolutionConfig(pop_size=10, generations=2, seed=2), checkpoint_dir=tmp_path)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["gen_0000.json", "gen_0001.json", "gen_0002.json"]


def test_front_scoring_uses_given_split(small_run):
    ds, _, result, _ = small_run
    train_front = result.front("train")
    again = result.front("test", ds, ds)
    assert [p.ci for p in train_front.raw] == pytest.approx([p.ci for p in again.raw], abs=1e-12)
