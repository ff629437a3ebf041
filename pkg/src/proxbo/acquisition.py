"""Acquisition functions over ensemble posterior statistics and batch selection.

`kg_oneshot` and `select_batch` only need a model exposing
`predict_batch(seqs) -> [(mean, variance)]` and
`fantasy_update(seqs, ys, data, steps, lr) -> model`, so exact conjugate
models can stand in for the ensemble in tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sequences import Sequence, hamming_distance
from .surrogate import Dataset


@dataclass(frozen=True)
class Posterior:
    mean: float
    std: float

    def __post_init__(self):
        if not (math.isfinite(self.mean) and math.isfinite(self.std)):
            raise ValueError(f"non-finite posterior ({self.mean}, {self.std})")
        if self.std < 0:
            raise ValueError(f"negative posterior std {self.std}")


@dataclass(frozen=True)
class KGConfig:
    n_fantasies: int = 16
    inner_pool_size: int = 256
    update_steps: int = 20
    update_lr: float = 1e-3
    inner_eval_size: int = 64  # candidates scored per greedy slot

    def __post_init__(self):
        if min(self.n_fantasies, self.inner_pool_size, self.update_steps,
               self.inner_eval_size) < 1 or self.update_lr <= 0:
            raise ValueError("all KG parameters must be positive")


def _norm_pdf(z: float) -> float:
    return math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def ucb(p: Posterior, beta: float) -> float:
    """Upper confidence bound: mean + beta * std."""
    if beta < 0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    return p.mean + beta * p.std


def ei(p: Posterior, best: float) -> float:
    """Expected improvement over the incumbent `best`, closed form."""
    if not math.isfinite(best):
        raise ValueError(f"non-finite incumbent {best}")
    if p.std == 0.0:
        return max(p.mean - best, 0.0)
    z = (p.mean - best) / p.std
    return (p.mean - best) * _norm_cdf(z) + p.std * _norm_pdf(z)


def _pool_max_mean(model, pool: list[Sequence]) -> float:
    return max(m for m, _ in model.predict_batch(pool))


def kg_oneshot(model, batch: list[Sequence], inner_pool: list[Sequence],
               data: Dataset, cfg: KGConfig, rng: np.random.Generator) -> float:
    """One-shot knowledge gradient of measuring `batch`.

    Averages, over sampled fantasy outcomes for the batch, the maximum
    posterior mean over `inner_pool` after a lightweight posterior update on
    the augmented dataset; subtracts the current maximum posterior mean.
    """
    if not batch or not inner_pool:
        raise ValueError("batch and inner_pool must be non-empty")
    incumbent = _pool_max_mean(model, inner_pool)
    return _kg_expected_max(model, batch, inner_pool, data, cfg, rng) - incumbent


def _kg_expected_max(model, batch: list[Sequence], inner_pool: list[Sequence],
                     data: Dataset, cfg: KGConfig, rng: np.random.Generator) -> float:
    """E over fantasies of the post-update max posterior mean (no incumbent)."""
    stats = model.predict_batch(batch)
    means = np.array([m for m, _ in stats])
    stds = np.sqrt(np.maximum([v for _, v in stats], 0.0))
    ys = means[None, :] + stds[None, :] * rng.standard_normal((cfg.n_fantasies, len(batch)))
    inner = model.fantasy_inner_means(batch, ys, inner_pool, data,
                                      steps=cfg.update_steps, lr=cfg.update_lr)
    return float(inner.max(axis=1).mean())


def _kg_slot_scores(model, chosen: list[Sequence], subset: list[Sequence],
                    inner_pool: list[Sequence], data: Dataset, cfg: KGConfig,
                    slot_seed: int) -> list[float]:
    """Incumbent-free KG score of `chosen + [c]` for every candidate `c`.

    Candidates share the random fantasy draws (common random numbers), so
    models exposing `fantasy_inner_means_multi` can train every candidate's
    head copies in one stack; the fallback loop computes the same values.
    """
    if hasattr(model, "fantasy_inner_means_multi"):
        z = np.random.default_rng(slot_seed).standard_normal(
            (cfg.n_fantasies, len(chosen) + 1))
        batches, ys = [], []
        for c in subset:
            batch = chosen + [c]
            stats = model.predict_batch(batch)
            means = np.array([m for m, _ in stats])
            stds = np.sqrt(np.maximum([v for _, v in stats], 0.0))
            batches.append(batch)
            ys.append(means[None, :] + stds[None, :] * z)
        inner = model.fantasy_inner_means_multi(batches, np.stack(ys), inner_pool,
                                                data, steps=cfg.update_steps,
                                                lr=cfg.update_lr)
        return inner.max(axis=2).mean(axis=1).tolist()
    return [_kg_expected_max(model, chosen + [c], inner_pool, data, cfg,
                             np.random.default_rng(slot_seed)) for c in subset]


def _ranked(pool: list[Sequence], scores: list[float],
            wild_type: Sequence | None) -> list[tuple]:
    """Sort keys: score desc, then distance to wild type asc, then ordinals."""
    def key(i):
        s = pool[i]
        d = hamming_distance(s, wild_type) if wild_type is not None else 0
        return (-scores[i], d, s.residues)
    return sorted(range(len(pool)), key=key)


def select_batch(strategy: str, model, pool: list[Sequence], data: Dataset, m: int,
                 *, beta: float = 2.0, incumbent: float | None = None,
                 kg_config: KGConfig | None = None,
                 inner_pool: list[Sequence] | None = None,
                 wild_type: Sequence | None = None,
                 rng: np.random.Generator | None = None) -> list[Sequence]:
    """Pick M distinct pool sequences by the chosen acquisition strategy.

    UCB/EI score the whole pool and take the top M (ties broken by smaller
    Hamming distance to the wild type, then lexicographic order). KG fills
    the batch greedily, scoring each extension of the partial batch with
    `kg_oneshot` over a UCB-preranked candidate subset.
    """
    if len(pool) < m:
        raise ValueError(f"pool of {len(pool)} smaller than batch size {m}")
    if strategy in ("ucb", "ei"):
        stats = [Posterior(mu, math.sqrt(max(var, 0.0))) for mu, var in model.predict_batch(pool)]
        if strategy == "ucb":
            scores = [ucb(p, beta) for p in stats]
        else:
            best = incumbent if incumbent is not None else data.max_score()
            scores = [ei(p, best) for p in stats]
        order = _ranked(pool, scores, wild_type)
        return [pool[i] for i in order[:m]]
    if strategy != "kg":
        raise ValueError(f"unknown strategy {strategy!r}")

    cfg = kg_config or KGConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    # prerank by UCB to bound the number of KG evaluations per slot
    stats = [Posterior(mu, math.sqrt(max(var, 0.0))) for mu, var in model.predict_batch(pool)]
    ucb_scores = [ucb(p, beta) for p in stats]
    order = _ranked(pool, ucb_scores, wild_type)
    candidates = [pool[i] for i in order]
    if inner_pool is None:
        inner_pool = candidates[: cfg.inner_pool_size]

    chosen: list[Sequence] = []
    for _ in range(m):
        remaining = [c for c in candidates if c not in chosen]
        subset = remaining[: cfg.inner_eval_size]
        slot_seed = int(rng.integers(0, 2**63 - 1))
        # the incumbent term is constant per slot, so it is dropped
        scores = _kg_slot_scores(model, chosen, subset, inner_pool, data, cfg,
                                 slot_seed)
        best_c, best_score = None, -math.inf
        for c, score in zip(subset, scores):
            if score > best_score:
                best_c, best_score = c, score
        chosen.append(best_c)
    return chosen
