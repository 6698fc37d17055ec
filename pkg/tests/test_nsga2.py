import math

import numpy as np
import pytest

from evomask.core import (
    full_region,
    make_mask,
    make_region,
    region_satisfied,
    right_half_region,
    zero_mask,
)
from evomask.detectors import TransportError
from evomask.nsga2 import (
    EvolutionAborted,
    GaConfig,
    Individual,
    binary_tournament,
    crowding_distance,
    dominates,
    evolve,
    fast_nondominated_sort,
    init_population,
    mutate,
    one_point_crossover,
    pixel_budget,
)
from evomask.objectives import ObjectiveVector
from oracles import pareto_ranks_peel


def vec(i, d, nd):
    return ObjectiveVector(intensity=i, degrad=d, neg_dist=nd)


def ind(i, d, nd):
    return Individual(genome=zero_mask(1, 1), objectives=vec(i, d, nd))


class ScriptedRng:
    """Replays queued draws; lets operator-level tests pin exact behaviour."""

    def __init__(self, randoms=(), ints=(), choices=(), permutations=()):
        self._randoms = list(randoms)
        self._ints = list(ints)
        self._choices = list(choices)
        self._permutations = list(permutations)

    def random(self):
        return self._randoms.pop(0)

    def integers(self, low, high=None, size=None):
        return self._ints.pop(0)

    def choice(self, n, size=None, replace=True):
        return np.asarray(self._choices.pop(0))

    def permutation(self, n):
        return np.asarray(self._permutations.pop(0))


class TestDominates:
    def test_strictly_better_everywhere(self):
        assert dominates(vec(1, 0.5, -2), vec(2, 0.6, -1))

    def test_irreflexive(self):
        a = vec(1, 0.5, -2)
        assert not dominates(a, a)

    def test_incomparable(self):
        a, b = vec(1, 0.9, -2), vec(2, 0.5, -1)
        assert not dominates(a, b)
        assert not dominates(b, a)

    def test_weak_improvement_dominates(self):
        assert dominates(vec(1, 0.5, -2), vec(1, 0.5, -1))


class TestSort:
    def test_single_dominator(self):
        best = ind(0, 0.0, -5)
        others = [ind(1 + k, (4 - k) / 10, -1) for k in range(4)]  # mutually incomparable
        fronts = fast_nondominated_sort([best] + others)
        assert fronts[0] == [best]
        assert best.rank == 1
        assert all(o.rank == 2 for o in others)

    def test_mutually_incomparable(self):
        pop = [ind(1, 0.9, -3), ind(2, 0.5, -2), ind(3, 0.2, -1)]
        fronts = fast_nondominated_sort(pop)
        assert len(fronts) == 1
        assert all(p.rank == 1 for p in pop)

    def test_matches_peel_oracle_on_random_populations(self):
        rng = np.random.default_rng(99)
        for _ in range(60):
            n = int(rng.integers(1, 17))
            pop = [
                ind(
                    float(rng.integers(0, 5)),
                    float(rng.integers(0, 5)) / 5.0,
                    -float(rng.integers(0, 5)),
                )
                for _ in range(n)
            ]
            fast_nondominated_sort(pop)
            want = pareto_ranks_peel([p.objectives.as_tuple() for p in pop])
            assert [p.rank for p in pop] == want

    def test_front_structure(self):
        rng = np.random.default_rng(123)
        pop = [
            ind(float(rng.integers(0, 4)), float(rng.integers(0, 4)) / 4, -float(rng.integers(0, 4)))
            for _ in range(24)
        ]
        fronts = fast_nondominated_sort(pop)
        for front in fronts:
            for a in front:
                assert not any(
                    dominates(b.objectives, a.objectives) for b in front if b is not a
                )
        for earlier, later in zip(fronts, fronts[1:]):
            for a in later:
                assert any(dominates(b.objectives, a.objectives) for b in earlier)


class TestCrowding:
    def test_small_fronts_all_infinite(self):
        one = [ind(1, 0.5, -1)]
        assert crowding_distance(one) == [math.inf]
        two = [ind(1, 0.5, -1), ind(2, 0.4, -2)]
        assert crowding_distance(two) == [math.inf, math.inf]

    def test_evenly_spaced_three(self):
        front = [ind(0, 0.0, -2), ind(1, 0.1, -1), ind(2, 0.2, 0)]
        dist = crowding_distance(front)
        assert dist[0] == math.inf and dist[2] == math.inf
        assert dist[1] == 3.0

    def test_identical_objectives_interior_zero(self):
        front = [ind(1, 0.5, -1) for _ in range(4)]
        dist = crowding_distance(front)
        assert dist[0] == math.inf and dist[-1] == math.inf
        assert dist[1] == 0.0 and dist[2] == 0.0

    def test_empty_front(self):
        assert crowding_distance([]) == []


class TestTournament:
    def test_rank_precedence(self):
        low = ind(1, 0.5, -1)
        low.rank, low.crowding = 1, 0.1
        high = ind(2, 0.6, -2)
        high.rank, high.crowding = 2, math.inf
        rng = ScriptedRng(choices=[[0, 1]])
        assert binary_tournament([low, high], rng) is low

    def test_crowding_preference(self):
        sparse = ind(1, 0.5, -1)
        sparse.rank, sparse.crowding = 1, 3.0
        dense = ind(2, 0.6, -2)
        dense.rank, dense.crowding = 1, 0.5
        rng = ScriptedRng(choices=[[1, 0]])
        assert binary_tournament([sparse, dense], rng) is sparse

    def test_full_tie_uses_rng(self):
        a = ind(1, 0.5, -1)
        b = ind(1, 0.5, -1)
        for indiv in (a, b):
            indiv.rank, indiv.crowding = 1, 2.0
        assert binary_tournament([a, b], ScriptedRng(choices=[[0, 1]], ints=[0])) is a
        assert binary_tournament([a, b], ScriptedRng(choices=[[0, 1]], ints=[1])) is b

    def test_needs_two(self):
        with pytest.raises(ValueError):
            binary_tournament([ind(1, 0.5, -1)], np.random.default_rng(0))


class TestCrossover:
    def test_self_crossover_copies(self):
        rng = np.random.default_rng(4)
        mask = make_mask(rng.integers(-255, 256, size=(4, 5, 3)))
        c1, c2 = one_point_crossover(mask, mask, np.random.default_rng(1))
        assert np.array_equal(c1, mask) and np.array_equal(c2, mask)

    def test_cut_at_zero_swaps_parents(self):
        rng = np.random.default_rng(4)
        a = make_mask(rng.integers(-255, 256, size=(3, 3, 3)))
        b = make_mask(rng.integers(-255, 256, size=(3, 3, 3)))
        c1, c2 = one_point_crossover(a, b, ScriptedRng(ints=[0]))
        assert np.array_equal(c1, b) and np.array_equal(c2, a)

    def test_pixel_multiset_conserved(self):
        rng = np.random.default_rng(40)
        for seed in range(10):
            a = make_mask(rng.integers(-255, 256, size=(6, 4, 3)))
            b = make_mask(rng.integers(-255, 256, size=(6, 4, 3)))
            c1, c2 = one_point_crossover(a, b, np.random.default_rng(seed))
            parents = sorted(map(tuple, np.vstack([a.reshape(-1, 3), b.reshape(-1, 3)]).tolist()))
            children = sorted(map(tuple, np.vstack([c1.reshape(-1, 3), c2.reshape(-1, 3)]).tolist()))
            assert parents == children

    def test_prefix_from_first_parent(self):
        rng = np.random.default_rng(41)
        a = make_mask(rng.integers(-255, 256, size=(2, 4, 3)))
        b = make_mask(rng.integers(-255, 256, size=(2, 4, 3)))
        c1, c2 = one_point_crossover(a, b, ScriptedRng(ints=[3]))
        assert np.array_equal(c1.reshape(-1, 3)[:3], a.reshape(-1, 3)[:3])
        assert np.array_equal(c1.reshape(-1, 3)[3:], b.reshape(-1, 3)[3:])
        assert np.array_equal(c2.reshape(-1, 3)[:3], b.reshape(-1, 3)[:3])
        assert np.array_equal(c2.reshape(-1, 3)[3:], a.reshape(-1, 3)[3:])

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            one_point_crossover(zero_mask(2, 2), zero_mask(3, 2), np.random.default_rng(0))


class TestMutate:
    def test_zero_probability_never_mutates(self):
        cfg = GaConfig(p_m=0.0)
        rng = np.random.default_rng(0)
        mask = make_mask(np.full((8, 8, 3), 5, dtype=np.int16))
        region = full_region(8, 8)
        for _ in range(50):
            assert np.array_equal(mutate(mask, region, cfg, rng), mask)

    def test_negation_is_involution(self):
        cfg = GaConfig(p_m=1.0)
        rng = np.random.default_rng(10)
        mask = make_mask(rng.integers(-255, 256, size=(6, 6, 3)))
        region = full_region(6, 6)
        picks = [[0, 7, 13], [0, 7, 13]]
        script = lambda: ScriptedRng(randoms=[0.0], ints=[0, 3], choices=[picks.pop(0)])
        once = mutate(mask, region, cfg, script())
        assert not np.array_equal(once, mask)
        twice = mutate(once, region, cfg, script())
        assert np.array_equal(twice, mask)

    def test_no_allowed_pixels_returns_input(self):
        cfg = GaConfig(p_m=1.0)
        mask = zero_mask(4, 4)
        region = make_region(np.zeros((4, 4), dtype=bool))
        out = mutate(mask, region, cfg, np.random.default_rng(3))
        assert np.array_equal(out, mask)

    def test_budget_region_and_range(self):
        cfg = GaConfig(p_m=1.0)
        region = right_half_region(32, 32)
        budget = pixel_budget(cfg, 32, 32)
        rng = np.random.default_rng(8)
        base = np.zeros((32, 32, 3), dtype=np.int16)
        base[:, 16:] = rng.integers(-255, 256, size=(32, 16, 3))
        mask = make_mask(base)
        gen = np.random.default_rng(1234)
        for _ in range(300):
            out = mutate(mask, region, cfg, gen)
            assert out.min() >= -255 and out.max() <= 255
            assert region_satisfied(out, region)
            changed = (out != mask).any(axis=2).sum()
            assert changed <= budget

    def test_same_seed_same_result(self):
        cfg = GaConfig(p_m=1.0)
        region = full_region(16, 16)
        rng = np.random.default_rng(2)
        mask = make_mask(rng.integers(-255, 256, size=(16, 16, 3)))
        a = mutate(mask, region, cfg, np.random.default_rng(55))
        b = mutate(mask, region, cfg, np.random.default_rng(55))
        assert np.array_equal(a, b)


class TestInitPopulation:
    def test_size_and_single_zero_member(self):
        cfg = GaConfig(population_size=21)
        region = full_region(16, 16)
        masks = init_population(16, 16, region, cfg, np.random.default_rng(5))
        assert len(masks) == 21
        zero_members = [m for m in masks if not m.any()]
        assert len(zero_members) == 1

    def test_range_and_region(self):
        cfg = GaConfig(population_size=15)
        region = right_half_region(20, 20)
        masks = init_population(20, 20, region, cfg, np.random.default_rng(6))
        for mask in masks:
            assert mask.min() >= -255 and mask.max() <= 255
            assert region_satisfied(mask, region)

    def test_deterministic(self):
        cfg = GaConfig(population_size=12)
        region = full_region(10, 10)
        a = init_population(10, 10, region, cfg, np.random.default_rng(7))
        b = init_population(10, 10, region, cfg, np.random.default_rng(7))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


def toy_problem(mask):
    m = np.asarray(mask, dtype=np.float64)
    perturbed = int(np.count_nonzero(np.abs(m).max(axis=2)))
    return ObjectiveVector(
        intensity=float(np.linalg.norm(m)),
        degrad=1.0 / (1.0 + perturbed),
        neg_dist=-float(np.abs(m).sum() / (perturbed + 1)),
    )


class TestEvolve:
    def test_zero_iterations_archives_initial_front(self):
        cfg = GaConfig(iterations=0, population_size=12, rng_seed=3)
        region = full_region(8, 8)
        archive = evolve(toy_problem, (8, 8), region, cfg)
        assert len(archive.fronts) == 1
        assert archive.fronts[0].generation == 0
        members = archive.fronts[0].members
        zero_members = [
            m for m in members if m.objectives.intensity == 0.0 and m.objectives.degrad == 1.0
        ]
        assert len(zero_members) == 1
        for a in members:
            assert not any(
                dominates(b.objectives, a.objectives) for b in members if b is not a
            )

    def test_deterministic_across_runs(self):
        cfg = GaConfig(iterations=4, population_size=10, rng_seed=11)
        region = full_region(8, 8)
        a = evolve(toy_problem, (8, 8), region, cfg)
        b = evolve(toy_problem, (8, 8), region, cfg)
        assert len(a.fronts) == len(b.fronts)
        for fa, fb in zip(a.fronts, b.fronts):
            assert fa.generation == fb.generation
            assert len(fa.members) == len(fb.members)
            for x, y in zip(fa.members, fb.members):
                assert x.objectives == y.objectives
                assert np.array_equal(x.genome, y.genome)

    def test_worker_count_does_not_change_results(self):
        cfg = GaConfig(iterations=3, population_size=10, rng_seed=21)
        region = full_region(8, 8)
        a = evolve(toy_problem, (8, 8), region, cfg, workers=1)
        b = evolve(toy_problem, (8, 8), region, cfg, workers=4)
        for fa, fb in zip(a.fronts, b.fronts):
            for x, y in zip(fa.members, fb.members):
                assert x.objectives == y.objectives
                assert np.array_equal(x.genome, y.genome)

    def test_best_degrad_non_increasing_and_constraints_hold(self):
        cfg = GaConfig(iterations=6, population_size=14, rng_seed=9)
        region = right_half_region(10, 10)
        archive = evolve(toy_problem, (10, 10), region, cfg)
        best = archive.best_degrad_by_generation()
        assert all(b2 <= b1 for b1, b2 in zip(best, best[1:]))
        for front in archive.fronts:
            for member in front.members:
                assert region_satisfied(member.genome, region)
                assert member.genome.min() >= -255 and member.genome.max() <= 255

    def test_archive_fronts_mutually_nondominated(self):
        cfg = GaConfig(iterations=4, population_size=12, rng_seed=17)
        region = full_region(8, 8)
        archive = evolve(toy_problem, (8, 8), region, cfg)
        for front in archive.fronts:
            for a in front.members:
                assert not any(
                    dominates(b.objectives, a.objectives) for b in front.members if b is not a
                )

    def test_survival_never_skips_a_better_rank(self):
        from evomask.nsga2 import _survivors

        rng = np.random.default_rng(33)
        pool = [
            ind(float(rng.integers(0, 6)), float(rng.integers(0, 6)) / 6, -float(rng.integers(0, 6)))
            for _ in range(40)
        ]
        for mu in (5, 17, 23, 39):
            chosen = _survivors(list(pool), mu)
            assert len(chosen) == mu
            worst_kept = max(indiv.rank for indiv in chosen)
            kept_ids = {id(indiv) for indiv in chosen}
            dropped = [indiv for indiv in pool if id(indiv) not in kept_ids]
            # no dropped individual may outrank (strictly beat) any kept one
            assert all(indiv.rank >= worst_kept for indiv in dropped)
            # within the cut front, kept members have the larger crowding
            cut_kept = sorted(i.crowding for i in chosen if i.rank == worst_kept)
            cut_dropped = [i.crowding for i in dropped if i.rank == worst_kept]
            if cut_kept and cut_dropped:
                assert min(cut_kept) >= max(cut_dropped)

    def test_every_evaluated_genome_respects_constraints(self):
        region = right_half_region(8, 8)
        seen = []

        def recording(mask):
            seen.append(mask)
            return toy_problem(mask)

        cfg = GaConfig(iterations=3, population_size=8, rng_seed=13)
        evolve(recording, (8, 8), region, cfg)
        assert len(seen) == 8 * 4  # initial population plus three offspring batches
        for mask in seen:
            assert region_satisfied(mask, region)
            assert mask.min() >= -255 and mask.max() <= 255

    def test_abort_carries_partial_archive(self):
        calls = {"n": 0}

        def failing(mask):
            calls["n"] += 1
            if calls["n"] > 25:
                raise TransportError("connection lost")
            return toy_problem(mask)

        cfg = GaConfig(iterations=5, population_size=10, rng_seed=1)
        region = full_region(8, 8)
        with pytest.raises(EvolutionAborted) as excinfo:
            evolve(failing, (8, 8), region, cfg)
        archive = excinfo.value.archive
        assert 1 <= len(archive.fronts) < 6


class TestGaConfigValidation:
    def test_defaults_match_standard_parametrization(self):
        cfg = GaConfig()
        assert cfg.iterations == 100
        assert cfg.population_size == 101
        assert cfg.p_c == 0.5
        assert cfg.p_m == 0.45
        assert cfg.window_fraction == 0.01

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"population_size": 1},
            {"p_c": 1.5},
            {"p_m": -0.1},
            {"window_fraction": 0.0},
            {"window_fraction": 1.5},
            {"rng_seed": -1},
            {"iterations": -1},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            GaConfig(**kwargs)
