"""Worst-case transformation-set search for data augmentation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigurationError, ContractError
from .base import AccuracyFn, DGPlugin
from .transforms import IDENTITY, RANGES, BasicTransform, ComposedTransform, random_basic, random_chain


@dataclass
class TransformPool:
    transforms: list[ComposedTransform] = field(default_factory=lambda: [IDENTITY])
    update_frequency: int = 20  # training iterations between evolutions; 0 disables
    population_size: int = 8
    generations: int = 3  # evaluated populations, the initial one included
    append_count: int = 2
    tournament_size: int = 2

    def __post_init__(self):
        if self.population_size < 1 or self.generations < 1 or self.append_count < 1 or self.tournament_size < 1:
            raise ConfigurationError("population, generations, append count and tournament size must be >= 1")
        if self.update_frequency < 0:
            raise ConfigurationError("update_frequency must be >= 0")

    def to_list(self) -> list:
        return [t.to_list() for t in self.transforms]


def mutate(chain: ComposedTransform, rng: np.random.Generator) -> ComposedTransform:
    """Jitter every magnitude by up to 10% of its range, then maybe add, drop or swap one link."""
    steps = []
    for t in chain.steps:
        lo, hi = RANGES[t.kind]
        steps.append(BasicTransform(t.kind, float(np.clip(t.magnitude + rng.uniform(-0.1, 0.1) * (hi - lo), lo, hi))))
    edit = int(rng.integers(0, 4))
    if edit == 1 and len(steps) < 3:
        steps.insert(int(rng.integers(0, len(steps) + 1)), random_basic(rng))
    elif edit == 2 and len(steps) > 1:
        steps.pop(int(rng.integers(0, len(steps))))
    elif edit == 3 and steps:
        steps[int(rng.integers(0, len(steps)))] = random_basic(rng)
    return ComposedTransform(tuple(steps))


def rsda_evolve(pool: TransformPool, accuracy_fn: AccuracyFn, images: np.ndarray, labels: np.ndarray,
                rng: np.random.Generator, population: list[ComposedTransform] | None = None) -> TransformPool:
    """Evolve chains that minimise probe accuracy and append the fittest to the pool.

    Fitness is lower accuracy on the transformed probe batch. Each generation
    breeds children by tournament selection and mutation; survivors are the
    best of parents and children. Ties keep the earlier candidate.
    """
    if len(images) == 0:
        raise ContractError("empty probe batch")
    pop = list(population) if population is not None else [random_chain(rng) for _ in range(pool.population_size)]
    evaluated: list[tuple[float, int, ComposedTransform]] = []

    def score(chain: ComposedTransform) -> float:
        acc = accuracy_fn(chain.apply(images, rng), labels)
        evaluated.append((acc, len(evaluated), chain))
        return acc

    fitness = [score(c) for c in pop]
    for _ in range(1, pool.generations):
        children, child_fit = [], []
        for _ in range(len(pop)):
            picks = rng.integers(0, len(pop), size=pool.tournament_size)
            parent = pop[min(picks, key=lambda i: (fitness[i], i))]
            child = mutate(parent, rng)
            children.append(child)
            child_fit.append(score(child))
        merged = sorted(zip(fitness + child_fit, range(2 * len(pop)), pop + children), key=lambda t: (t[0], t[1]))
        survivors = merged[:len(pop)]
        fitness = [f for f, _, _ in survivors]
        pop = [c for _, _, c in survivors]
    best = sorted(evaluated, key=lambda t: (t[0], t[1]))[:pool.append_count]
    pool.transforms.extend(c for _, _, c in best)
    return pool


def rsda_augment_batch(pool: TransformPool, images: np.ndarray, rng: np.random.Generator,
                       return_identity: bool = False):
    """Each sample goes through one chain drawn uniformly from the pool.

    With ``return_identity`` also returns the mask of rows that drew an identity chain.
    """
    if not pool.transforms:
        raise ContractError("transform pool is empty")
    if len(pool.transforms) == 1 and pool.transforms[0].is_identity:
        return (images, np.ones(len(images), dtype=bool)) if return_identity else images
    choice = rng.integers(0, len(pool.transforms), size=len(images))
    out = np.empty(np.shape(images), dtype=np.float64)
    for i, k in enumerate(choice):
        out[i] = pool.transforms[k].apply(images[i:i + 1], rng)[0]
    if return_identity:
        return out, np.array([pool.transforms[k].is_identity for k in choice], dtype=bool)
    return out


class TransformSearch(DGPlugin):
    name = "rsda"

    def __init__(self, update_frequency: int = 20, population_size: int = 8, generations: int = 3,
                 append_count: int = 2):
        self.pool = TransformPool(update_frequency=update_frequency, population_size=population_size,
                                  generations=generations, append_count=append_count)

    def prepare_batch(self, images, labels):
        out, identity = rsda_augment_batch(self.pool, images, self.rng, return_identity=True)
        return out, labels, identity

    def original_rows(self, aux, total):
        return np.ones(total, dtype=bool) if aux is None else aux

    def after_iteration(self, iteration, images, labels, accuracy_fn):
        freq = self.pool.update_frequency
        if freq and iteration % freq == 0:
            rsda_evolve(self.pool, accuracy_fn, images, labels, self.rng)

    def state(self):
        return {"name": self.name, "update_frequency": self.pool.update_frequency,
                "population_size": self.pool.population_size, "generations": self.pool.generations,
                "append_count": self.pool.append_count, "transforms": self.pool.to_list()}

    def load(self, state, arrays):
        self.pool.transforms = [ComposedTransform.from_list(t) for t in state["transforms"]]
