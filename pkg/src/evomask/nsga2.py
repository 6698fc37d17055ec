"""Customized NSGA-II engine over filter-mask genomes.

Selection follows the standard scheme: Pareto rank first, crowding distance
as the tie-break, with (mu+lambda) survival that pools parents and
offspring, refills by ascending rank and truncates the last admitted front
by descending crowding.  The rank-1 front of the population is archived
every generation, the initial population included.

Reproducibility contract: a run is a pure function of the configuration.
All randomness flows from ``GaConfig.rng_seed`` through documented
SeedSequence spawn keys:

* ``(0,)``            initial population,
* ``(g,)``            tournament/crossover draws of generation g >= 1,
* ``(g, i)``          mutation of offspring i in generation g.

Fitness evaluation draws no random numbers at all, so fanning evaluation
out to a worker pool cannot perturb the stream: results are identical for
any worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import make_mask, project_mask, zero_mask
from .detectors import DetectorError
from .objectives import ObjectiveVector


@dataclass(frozen=True)
class GaConfig:
    iterations: int = 100
    population_size: int = 101
    p_c: float = 0.5  # crossover probability
    p_m: float = 0.45  # mutation probability
    window_fraction: float = 0.01  # max fraction of pixels one mutation may alter
    rng_seed: int = 0
    init_sigma: float = 16.0  # stddev of the Gaussian initial masks

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if self.population_size < 2:
            raise ValueError(f"population_size must be >= 2, got {self.population_size}")
        for name in ("p_c", "p_m"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if not 0.0 < self.window_fraction <= 1.0:
            raise ValueError(f"window_fraction must lie in (0, 1], got {self.window_fraction}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError(f"rng_seed must be an unsigned 64-bit integer, got {self.rng_seed}")
        if self.init_sigma <= 0:
            raise ValueError(f"init_sigma must be > 0, got {self.init_sigma}")


@dataclass(eq=False)
class Individual:
    genome: np.ndarray
    objectives: ObjectiveVector | None = None
    rank: int | None = None
    crowding: float | None = None


@dataclass
class ArchivedFront:
    generation: int
    members: list[Individual]


@dataclass
class ParetoArchive:
    """Per-generation record of the rank-1 individuals."""

    fronts: list[ArchivedFront] = field(default_factory=list)

    def add(self, generation: int, members) -> None:
        self.fronts.append(ArchivedFront(generation, list(members)))

    def final_front(self) -> list[Individual]:
        return self.fronts[-1].members

    def best_degrad_by_generation(self) -> list[float]:
        return [min(ind.objectives.degrad for ind in f.members) for f in self.fronts]


class EvolutionAborted(RuntimeError):
    """A detector failed mid-run; carries the archive built so far."""

    def __init__(self, archive: ParetoArchive, cause: Exception):
        super().__init__(f"evolution aborted: {cause}")
        self.archive = archive


def dominates(a: ObjectiveVector, b: ObjectiveVector) -> bool:
    """Pareto dominance, minimization orientation: a is no worse everywhere
    and strictly better somewhere."""
    ta, tb = a.as_tuple(), b.as_tuple()
    if any(x > y for x, y in zip(ta, tb)):
        return False
    return any(x < y for x, y in zip(ta, tb))


def fast_nondominated_sort(pop: list[Individual]) -> list[list[Individual]]:
    """Assign 1-based Pareto ranks and return the fronts in rank order.

    Rank 1 is the non-dominated subset; removing ranks below i and taking
    the non-dominated remainder yields rank i.
    """
    n = len(pop)
    if n == 0:
        return []
    objs = np.array([ind.objectives.as_tuple() for ind in pop], dtype=np.float64)
    no_worse = (objs[:, None, :] <= objs[None, :, :]).all(axis=2)
    better = (objs[:, None, :] < objs[None, :, :]).any(axis=2)
    dominates_matrix = no_worse & better  # [i, j] == True iff i dominates j
    dominated_by = dominates_matrix.sum(axis=0)

    fronts: list[list[Individual]] = []
    current = [i for i in range(n) if dominated_by[i] == 0]
    remaining = dominated_by.copy()
    rank = 1
    while current:
        for i in current:
            pop[i].rank = rank
        fronts.append([pop[i] for i in current])
        successors: list[int] = []
        for i in current:
            for j in np.nonzero(dominates_matrix[i])[0]:
                remaining[j] -= 1
                if remaining[j] == 0:
                    successors.append(int(j))
        current = sorted(successors)
        rank += 1
    return fronts


def crowding_distance(front: list[Individual]) -> list[float]:
    """Crowding distances for one front (all members share a rank).

    Boundary individuals per objective get +inf; interior individuals
    accumulate the normalized gap between their neighbours, summed over
    objectives.  An objective whose values all coincide contributes 0.
    """
    n = len(front)
    if n == 0:
        return []
    dist = [0.0] * n
    objs = [ind.objectives.as_tuple() for ind in front]
    for m in range(3):
        order = sorted(range(n), key=lambda i: objs[i][m])
        dist[order[0]] = math.inf
        dist[order[-1]] = math.inf
        span = objs[order[-1]][m] - objs[order[0]][m]
        if span == 0.0:
            continue
        for k in range(1, n - 1):
            dist[order[k]] += (objs[order[k + 1]][m] - objs[order[k - 1]][m]) / span
    for ind, d in zip(front, dist):
        ind.crowding = d
    return dist


def binary_tournament(pop: list[Individual], rng: np.random.Generator) -> Individual:
    """Pareto-sorted binary tournament: lower rank wins, then larger
    crowding distance, then a coin flip."""
    if len(pop) < 2:
        raise ValueError("tournament needs a population of at least 2")
    i, j = rng.choice(len(pop), size=2, replace=False)
    a, b = pop[int(i)], pop[int(j)]
    if a.rank != b.rank:
        return a if a.rank < b.rank else b
    if a.crowding != b.crowding:
        return a if a.crowding > b.crowding else b
    return a if rng.integers(2) == 0 else b


def one_point_crossover(
    a: np.ndarray, b: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Swap whole-pixel tails at one row-major pixel index.

    Offspring 1 takes a's pixels before the cut and b's from the cut on;
    offspring 2 is the mirror.  Channels travel with their pixel.
    """
    if a.shape != b.shape:
        raise ValueError(f"parent shape mismatch: {a.shape} vs {b.shape}")
    height, width = a.shape[:2]
    flat_a = a.reshape(height * width, 3)
    flat_b = b.reshape(height * width, 3)
    cut = int(rng.integers(height * width))
    child1 = np.concatenate([flat_a[:cut], flat_b[cut:]]).reshape(a.shape)
    child2 = np.concatenate([flat_b[:cut], flat_a[cut:]]).reshape(a.shape)
    return make_mask(child1), make_mask(child2)


def pixel_budget(cfg: GaConfig, height: int, width: int) -> int:
    """Max pixels a single mutation may alter: ceil(window_fraction * L * W)."""
    return math.ceil(cfg.window_fraction * height * width)


def _pick_window(
    region: np.ndarray, coords: np.ndarray, budget: int, rng: np.random.Generator
) -> tuple[int, int, int, int] | None:
    """A random rectangle of area <= budget lying fully inside the allowed
    region, or None if a few tries found none."""
    height, width = region.shape
    for _ in range(16):
        win_h = int(rng.integers(1, min(height, budget) + 1))
        win_w = int(rng.integers(1, min(width, budget // win_h) + 1))
        i0, j0 = coords[int(rng.integers(len(coords)))]
        i0 = min(int(i0), height - win_h)
        j0 = min(int(j0), width - win_w)
        if region[i0 : i0 + win_h, j0 : j0 + win_w].all():
            return i0, j0, win_h, win_w
    return None


def mutate(
    mask: np.ndarray, region: np.ndarray, cfg: GaConfig, rng: np.random.Generator
) -> np.ndarray:
    """With probability p_m apply one of four operators to at most the
    windowed pixel budget, all pixels drawn from the allowed region:

    1. negate the selected pixels' channel values (an involution),
    2. shuffle the selected pixels' value triples,
    3. assign fresh uniform values in [-255, 255] per channel,
    4. flip a rectangular window horizontally, vertically or both.

    The result is re-projected through the region as a safety net.
    """
    if rng.random() >= cfg.p_m:
        return mask
    coords = np.argwhere(region)
    if len(coords) == 0:
        return mask
    height, width = mask.shape[:2]
    budget = pixel_budget(cfg, height, width)
    out = mask.copy()
    op = int(rng.integers(4))
    if op < 3:
        count = min(int(rng.integers(1, budget + 1)), len(coords))
        sel = coords[rng.choice(len(coords), size=count, replace=False)]
        rows, cols = sel[:, 0], sel[:, 1]
        if op == 0:
            out[rows, cols] = -out[rows, cols]
        elif op == 1:
            perm = rng.permutation(count)
            out[rows, cols] = mask[rows[perm], cols[perm]]
        else:
            out[rows, cols] = rng.integers(-255, 256, size=(count, 3))
    else:
        window = _pick_window(region, coords, budget, rng)
        if window is None:
            return mask
        i0, j0, win_h, win_w = window
        block = mask[i0 : i0 + win_h, j0 : j0 + win_w]
        variant = int(rng.integers(3))
        if variant == 0:
            flipped = block[::-1, :]
        elif variant == 1:
            flipped = block[:, ::-1]
        else:
            flipped = block[::-1, ::-1]
        out[i0 : i0 + win_h, j0 : j0 + win_w] = flipped
    return project_mask(make_mask(out), region)


def init_population(
    height: int,
    width: int,
    region: np.ndarray,
    cfg: GaConfig,
    rng: np.random.Generator,
) -> list[np.ndarray]:
    """population_size - 1 random masks plus exactly one all-zero mask.

    Each random mask starts as rounded Gaussian noise (mean 0, sigma
    cfg.init_sigma) and is then, with probability 1/2, post-processed by
    one classic noise transform: salt-and-pepper (1% of pixels forced to
    +-255), speckle (scaled by 1 + N(0, 0.5)) or uniform (+U[-8, 8]).
    Every mask is projected through the region.
    """
    masks = []
    for _ in range(cfg.population_size - 1):
        values = np.rint(rng.normal(0.0, cfg.init_sigma, size=(height, width, 3)))
        values = np.clip(values, -255, 255).astype(np.int64)
        if rng.random() < 0.5:
            kind = int(rng.integers(3))
            if kind == 0:
                count = max(1, round(0.01 * height * width))
                flat = rng.choice(height * width, size=count, replace=False)
                signs = rng.integers(0, 2, size=count) * 2 - 1
                values.reshape(height * width, 3)[flat] = (signs * 255)[:, None]
            elif kind == 1:
                values = np.rint(values * (1.0 + rng.normal(0.0, 0.5, size=values.shape)))
            else:
                values = values + rng.integers(-8, 9, size=values.shape)
            values = np.clip(values, -255, 255).astype(np.int64)
        masks.append(project_mask(make_mask(values), region))
    masks.append(project_mask(zero_mask(height, width), region))
    return masks


def _generator(seed: int, spawn_key: tuple[int, ...]) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=spawn_key)))


def _evaluate_all(individuals: list[Individual], problem, workers: int) -> None:
    pending = [ind for ind in individuals if ind.objectives is None]
    if not pending:
        return
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(problem, [ind.genome for ind in pending]))
    else:
        results = [problem(ind.genome) for ind in pending]
    for ind, objectives in zip(pending, results):
        ind.objectives = objectives


def _survivors(pool: list[Individual], mu: int) -> list[Individual]:
    """(mu+lambda) truncation: fill by ascending rank, cut the last front
    by descending crowding."""
    fronts = fast_nondominated_sort(pool)
    chosen: list[Individual] = []
    for front in fronts:
        crowding_distance(front)
        if len(chosen) + len(front) <= mu:
            chosen.extend(front)
        else:
            take = mu - len(chosen)
            ordered = sorted(front, key=lambda ind: -ind.crowding)
            chosen.extend(ordered[:take])
            break
    return chosen


def evolve(
    problem,
    shape: tuple[int, int],
    region: np.ndarray,
    cfg: GaConfig,
    workers: int = 1,
) -> ParetoArchive:
    """Run the generation loop and return the per-generation Pareto archive.

    ``problem`` maps a filter mask to an ObjectiveVector and must be
    deterministic; it is the only code the worker pool touches.  On a
    DetectorError the run aborts cleanly and the partial archive travels
    on the raised EvolutionAborted.
    """
    height, width = shape
    archive = ParetoArchive()
    population = [
        Individual(genome)
        for genome in init_population(height, width, region, cfg, _generator(cfg.rng_seed, (0,)))
    ]
    try:
        _evaluate_all(population, problem, workers)
    except DetectorError as exc:
        raise EvolutionAborted(archive, exc) from exc
    fronts = fast_nondominated_sort(population)
    for front in fronts:
        crowding_distance(front)
    archive.add(0, fronts[0])

    for generation in range(1, cfg.iterations + 1):
        rng = _generator(cfg.rng_seed, (generation,))
        offspring: list[Individual] = []
        while len(offspring) < cfg.population_size:
            parent1 = binary_tournament(population, rng)
            parent2 = binary_tournament(population, rng)
            if rng.random() < cfg.p_c:
                child1, child2 = one_point_crossover(parent1.genome, parent2.genome, rng)
            else:
                child1, child2 = parent1.genome, parent2.genome
            for genome in (child1, child2):
                if len(offspring) >= cfg.population_size:
                    break
                mut_rng = _generator(cfg.rng_seed, (generation, len(offspring)))
                offspring.append(Individual(mutate(genome, region, cfg, mut_rng)))
        try:
            _evaluate_all(offspring, problem, workers)
        except DetectorError as exc:
            raise EvolutionAborted(archive, exc) from exc
        population = _survivors(population + offspring, cfg.population_size)
        fronts = fast_nondominated_sort(population)
        for front in fronts:
            crowding_distance(front)
        archive.add(generation, fronts[0])
    return archive
