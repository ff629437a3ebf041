"""Proximal regularized search: frontier maintenance, candidate pools, rounds.

The campaign keeps a non-dominated frontier of measured sequences trading
low mutation count against high fitness, proposes mutant pools around it,
and selects query batches with an acquisition applied to the distance-
regularized posterior (mean shifted by -lambda * d(s, wild_type)).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .acquisition import KGConfig, select_batch
from .landscape import BudgetedOracle
from .sequences import Sequence, hamming_distance, sample_mutants
from .surrogate import Dataset, Ensemble, TrainConfig


def regularized_score(fitness: float, distance: int, lam: float) -> float:
    """Distance-regularized objective: fitness - lambda * distance."""
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    if distance < 0:
        raise ValueError(f"distance must be >= 0, got {distance}")
    return fitness - lam * distance


@dataclass(frozen=True)
class FrontierPoint:
    sequence: Sequence
    distance: int
    fitness: float


@dataclass
class ExplorerState:
    wild_type: Sequence
    data: Dataset = field(default_factory=Dataset)
    frontier: list[FrontierPoint] = field(default_factory=list)
    round_index: int = 0

    def make_point(self, s: Sequence, fitness: float) -> FrontierPoint:
        return FrontierPoint(s, hamming_distance(s, self.wild_type), fitness)


def update_frontier(frontier: list[FrontierPoint],
                    new_points: list[FrontierPoint]) -> list[FrontierPoint]:
    """Non-dominated set under (minimize distance, maximize fitness).

    A point is dominated when another has distance <= and fitness >= with at
    least one strict. The result is sorted by distance; fitness is then
    strictly increasing. Idempotent.
    """
    points = list(frontier) + list(new_points)
    points.sort(key=lambda p: (p.distance, -p.fitness, p.sequence.residues))
    kept: list[FrontierPoint] = []
    best_fit = -np.inf
    prev_dist = None
    for p in points:
        if p.distance == prev_dist:
            continue  # same distance, lower-or-equal fitness: dominated or duplicate
        if p.fitness > best_fit:
            kept.append(p)
            best_fit = p.fitness
            prev_dist = p.distance
    return kept


@dataclass
class PoolProposal:
    sequences: list[Sequence]
    short: bool  # True when the domain could not fill the requested size


def propose_pool(state: ExplorerState, domain, pool_size: int, radius: int,
                 rng: np.random.Generator) -> PoolProposal:
    """Sample unmeasured candidates around the frontier and the wild type.

    Anchors are drawn uniformly from frontier points plus the wild type; the
    radius widens up to L if the pool underfills. On enumerable domains the
    final fallback is the full unmeasured set (flagged short if it is still
    smaller than `pool_size`).
    """
    if pool_size < 1:
        raise ValueError(f"pool_size must be >= 1, got {pool_size}")
    anchors = [p.sequence for p in state.frontier] or [state.wild_type]
    if state.wild_type not in anchors:
        anchors.append(state.wild_type)
    length = len(state.wild_type)
    pool: list[Sequence] = []
    seen: set[Sequence] = set()

    def draw_at(r: int) -> None:
        stale = 0
        while len(pool) < pool_size and stale < 30:
            anchor = anchors[int(rng.integers(len(anchors)))]
            chunk = sample_mutants(anchor, r, min(16, pool_size - len(pool)), rng)
            grew = False
            for c in chunk:
                if c in seen or c in state.data:
                    continue
                if domain is not None and not domain.contains(c):
                    continue
                seen.add(c)
                pool.append(c)
                grew = True
            stale = 0 if grew else stale + 1

    draw_at(min(radius, length))
    if len(pool) >= pool_size:
        return PoolProposal(pool, short=False)
    enumerable = (domain is not None and hasattr(domain, "iter_domain")
                  and hasattr(domain, "num_states") and domain.num_states() <= 2**20)
    if not enumerable:
        # widen the mutation radius until the pool fills or radius reaches L
        for r in range(min(radius, length) + 1, length + 1):
            draw_at(r)
            if len(pool) >= pool_size:
                return PoolProposal(pool, short=False)
        return PoolProposal(pool, short=True)
    # small enumerable domain: fill from the shuffled unmeasured remainder
    rest = [c for c in domain.iter_domain() if c not in seen and c not in state.data]
    for i in rng.permutation(len(rest)):
        if len(pool) >= pool_size:
            return PoolProposal(pool, short=False)
        pool.append(rest[int(i)])
    return PoolProposal(pool, short=len(pool) < pool_size)


@dataclass
class RoundRecord:
    round_index: int
    sequences: list[Sequence]
    scores: list[float]
    cumulative_max: float
    wall_time: float
    lambda_used: float = 0.0
    pool_size: int = 0
    short_pool: bool = False


class _ShiftedModel:
    """Posterior with mean shifted by a per-sequence penalty, std unchanged.

    Fantasy updates train the underlying model on physical values, so the
    penalty is added back onto fantasy outcomes before delegation.
    """

    def __init__(self, model, penalty):
        self._model = model
        self._penalty = penalty

    def predict_batch(self, batch):
        return [(mu - self._penalty(s), var)
                for s, (mu, var) in zip(batch, self._model.predict_batch(batch))]

    def fantasy_update(self, batch, ys, data, steps=20, lr=1e-3):
        physical = [y + self._penalty(s) for s, y in zip(batch, ys)]
        return _ShiftedModel(self._model.fantasy_update(batch, physical, data,
                                                        steps=steps, lr=lr),
                             self._penalty)

    def fantasy_inner_means(self, batch, ys, inner_pool, data, steps=20, lr=1e-3):
        physical = np.asarray(ys, dtype=np.float64) + np.array(
            [self._penalty(s) for s in batch])[None, :]
        inner = self._model.fantasy_inner_means(batch, physical, inner_pool, data,
                                                steps=steps, lr=lr)
        return inner - np.array([self._penalty(s) for s in inner_pool])[None, :]

    def fantasy_inner_means_multi(self, batches, ys, inner_pool, data,
                                  steps=20, lr=1e-3):
        physical = np.asarray(ys, dtype=np.float64) + np.stack(
            [[self._penalty(s) for s in batch] for batch in batches])[:, None, :]
        inner = self._model.fantasy_inner_means_multi(batches, physical, inner_pool,
                                                      data, steps=steps, lr=lr)
        return inner - np.array([self._penalty(s) for s in inner_pool])[None, None, :]


def _ingest(state: ExplorerState, batch: list[Sequence], scores: list[float]) -> None:
    state.data.extend(zip(batch, scores))
    state.frontier = update_frontier(state.frontier,
                                     [state.make_point(s, y) for s, y in zip(batch, scores)])


def _finish_round(state: ExplorerState, batch, scores, t0, **extra) -> RoundRecord:
    state.round_index += 1
    return RoundRecord(round_index=state.round_index, sequences=batch, scores=scores,
                       cumulative_max=state.data.max_score(),
                       wall_time=time.perf_counter() - t0, **extra)


def _cold_start(state: ExplorerState, oracle: BudgetedOracle, m: int,
                rng: np.random.Generator, t0) -> tuple[ExplorerState, RoundRecord]:
    domain = oracle.inner
    batch: list[Sequence] = []
    attempts = 0
    while len(batch) < m and attempts < m * 200:
        attempts += 1
        cand = sample_mutants(state.wild_type, min(2, len(state.wild_type)), 1, rng)
        if not cand:
            continue
        c = cand[0]
        if c in state.data or c in batch:
            continue
        if not domain.contains(c):
            continue
        batch.append(c)
    if not batch:
        raise RuntimeError("cold start could not find any unmeasured in-domain mutants")
    scores = oracle.query_batch(batch)
    _ingest(state, batch, scores)
    return state, _finish_round(state, batch, scores, t0)


def run_round(state: ExplorerState, ensemble: Ensemble, oracle: BudgetedOracle,
              *, strategy: str = "kg", lam: float = 0.0, beta: float = 2.0,
              kg_config: KGConfig | None = None, pool_size: int = 512,
              radius: int = 2, train_cfg: TrainConfig | None = None,
              warm_cfg: TrainConfig | None = None,
              rng: np.random.Generator | None = None) -> tuple[ExplorerState, RoundRecord]:
    """One model-guided campaign round (Batch BO).

    With no prior measurements beyond the wild type, the first round queries
    random low-order mutants with no model guidance. Otherwise: propose a
    pool, select a batch with the acquisition applied to the regularized
    posterior, query the oracle, refit the ensemble.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    t0 = time.perf_counter()
    if len(state.data) <= 1:
        state, record = _cold_start(state, oracle, oracle.batch_size, rng, t0)
        ensemble.fit(state.data, train_cfg, rng)
        return state, record

    proposal = propose_pool(state, oracle.inner, pool_size, radius, rng)
    m = min(oracle.batch_size, len(proposal.sequences))
    if m == 0:
        raise RuntimeError("candidate pool is empty; domain exhausted")

    penalty = lambda s: lam * hamming_distance(s, state.wild_type)
    model = _ShiftedModel(ensemble, penalty) if lam > 0 else ensemble
    incumbent = max(regularized_score(y, hamming_distance(s, state.wild_type), lam)
                    for s, y in zip(state.data.sequences, state.data.scores))
    kg_cfg = kg_config or KGConfig()
    batch = select_batch(strategy, model, proposal.sequences, state.data, m,
                         beta=beta, incumbent=incumbent, kg_config=kg_cfg,
                         wild_type=state.wild_type, rng=rng)
    scores = oracle.query_batch(batch)
    _ingest(state, batch, scores)
    if warm_cfg is not None:
        ensemble.fit(state.data, warm_cfg, rng, warm_start=True)
    else:
        ensemble.fit(state.data, train_cfg, rng)
    return state, _finish_round(state, batch, scores, t0, lambda_used=lam,
                                pool_size=len(proposal.sequences),
                                short_pool=proposal.short)


def random_search_round(state: ExplorerState, oracle: BudgetedOracle, m: int,
                        rng: np.random.Generator) -> tuple[ExplorerState, RoundRecord]:
    """Baseline: each proposal is a 1-point mutation of a random measured parent."""
    if len(state.data) == 0:
        raise ValueError("random search needs at least one measured sequence")
    t0 = time.perf_counter()
    parents = state.data.sequences
    batch: list[Sequence] = []
    chosen: set[Sequence] = set()
    attempts = 0
    while len(batch) < m and attempts < m * 500:
        attempts += 1
        parent = parents[int(rng.integers(len(parents)))]
        c = sample_mutants(parent, 1, 1, rng)[0]
        if c in state.data or c in chosen or not oracle.inner.contains(c):
            continue
        chosen.add(c)
        batch.append(c)
    if not batch:
        raise RuntimeError("random search found no unmeasured in-domain mutants")
    scores = oracle.query_batch(batch)
    _ingest(state, batch, scores)
    return state, _finish_round(state, batch, scores, t0)


def pex_greedy_round(state: ExplorerState, ensemble: Ensemble, oracle: BudgetedOracle,
                     m: int, *, pool_size: int = 512, radius: int = 2,
                     train_cfg: TrainConfig | None = None,
                     warm_cfg: TrainConfig | None = None,
                     rng: np.random.Generator | None = None) -> tuple[ExplorerState, RoundRecord]:
    """Proximal-frontier greedy baseline.

    Mutants of frontier points are scored by posterior mean only and the
    batch is filled by sweeping distance-to-wild-type classes in increasing
    order, taking the best remaining candidate per class round-robin.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    t0 = time.perf_counter()
    if len(state.data) <= 1:
        state, record = _cold_start(state, oracle, m, rng, t0)
        ensemble.fit(state.data, train_cfg, rng)
        return state, record

    proposal = propose_pool(state, oracle.inner, pool_size, radius, rng)
    if not proposal.sequences:
        raise RuntimeError("candidate pool is empty; domain exhausted")
    stats = ensemble.predict_batch(proposal.sequences)
    by_class: dict[int, list[tuple[float, Sequence]]] = {}
    for s, (mu, _) in zip(proposal.sequences, stats):
        by_class.setdefault(hamming_distance(s, state.wild_type), []).append((mu, s))
    for cands in by_class.values():
        cands.sort(key=lambda t: (-t[0], t[1].residues))
    batch: list[Sequence] = []
    while len(batch) < min(m, len(proposal.sequences)):
        progressed = False
        for d in sorted(by_class):
            if by_class[d]:
                batch.append(by_class[d].pop(0)[1])
                progressed = True
                if len(batch) == m:
                    break
        if not progressed:
            break
    scores = oracle.query_batch(batch)
    _ingest(state, batch, scores)
    if warm_cfg is not None:
        ensemble.fit(state.data, warm_cfg, rng, warm_start=True)
    else:
        ensemble.fit(state.data, train_cfg, rng)
    return state, _finish_round(state, batch, scores, t0,
                                pool_size=len(proposal.sequences),
                                short_pool=proposal.short)
