"""Temporal anomaly scoring from aligned daily embeddings.

Each day is one patch. Patches are linked when their days differ by a lag in
the lag set, aligned into a common frame, and averaged into a reference
embedding. A node's raw score on a day is its distance from the reference;
scores are standardized per node against the node's other days.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .align import align_patches
from .embed import svd_bipartite_embed
from .errors import ConfigError, DataError, DisconnectedError
from .evaluation import random_orthogonal
from .graph import BIPARTITE
from .patches import PatchGraph

log = logging.getLogger(__name__)

DEFAULT_LAGS = (1, 7, 14, 21, 28, 35, 42, 49)
SOURCE = "source"
DESTINATION = "destination"
DEGENERATE_STD = 1e-12


@dataclass(frozen=True, eq=False)
class TemporalPatchSet:
    """One patch per day and role; ``roles[r].patches[k]`` belongs to ``days[k]``."""

    days: np.ndarray
    lags: tuple
    roles: dict
    dropped: dict = field(default_factory=dict)

    @property
    def num_days(self):
        return self.days.size


@dataclass(frozen=True, eq=False)
class Reference:
    role: str
    embedding: object
    aligned: list
    alignment: object


@dataclass(frozen=True, eq=False)
class AnomalySeries:
    """Long-format scores: entry ``e`` is node ``node_ids[e]`` on day ``days[e]``.

    ``z`` is NaN for unscored entries (node below the observation minimum);
    ``degenerate`` marks entries whose leave-one-out deviation vanished.
    """

    role: str
    node_ids: np.ndarray
    days: np.ndarray
    raw: np.ndarray
    z: np.ndarray | None = None
    n_obs: np.ndarray | None = None
    scored: np.ndarray | None = None
    degenerate: np.ndarray | None = None

    def __len__(self):
        return self.raw.size

    def for_node(self, node):
        sel = self.node_ids == node
        return self.days[sel], self.raw[sel]


@dataclass(frozen=True, eq=False)
class OutlierReport:
    threshold: float
    flagged: np.ndarray
    per_day: dict

    def flagged_pairs(self, series):
        return list(zip(series.node_ids[self.flagged].tolist(), series.days[self.flagged].tolist()))


def lag_edges(days, lags):
    """Index pairs ``(a, b)``, ``a < b``, whose day difference is a lag."""
    days = np.asarray(days)
    lagset = set(int(x) for x in lags)
    i, j = np.triu_indices(days.size, 1)
    keep = np.isin(np.abs(days[j] - days[i]), list(lagset))
    return np.stack([i[keep], j[keep]], axis=1)


def temporal_patch_graph(days, node_sets, coords, lags, d, role=SOURCE):
    """Lagged patch graph over daily patches; edges with overlap < d+1 are dropped.

    Returns ``(patch_graph, dropped_day_pairs)``.
    """
    days = np.asarray(days)
    pg = PatchGraph(tuple(node_sets), lag_edges(days, lags), tuple(coords))
    low = pg.weights < d + 1
    dropped = [(int(days[a]), int(days[b])) for a, b in pg.edges[low]]
    if dropped:
        log.info("%s: dropping %d lag edges with overlap < %d", role, len(dropped), d + 1)
        pg = pg.with_edges(pg.edges[~low])
    comps = pg.components()
    if len(comps) > 1:
        listed = [days[c].tolist() for c in comps]
        raise DisconnectedError(f"{role} lag patch graph is disconnected; components by day: {listed}",
                                components=listed)
    return pg, dropped


def build_temporal_patches(snapshots, d, lags=DEFAULT_LAGS, *, seed=0, jobs=1):
    """Embed each day's bipartite graph and link days by lag.

    ``snapshots`` maps day index to a bipartite-directed graph. Source and
    destination sides get separate patch graphs.
    """
    lags = tuple(sorted(set(int(x) for x in lags)))
    if not lags:
        raise ConfigError("lag set must not be empty")
    if any(x <= 0 for x in lags):
        raise ConfigError("lags must be positive")
    if not snapshots:
        raise DataError("no snapshots")
    days = np.array(sorted(snapshots), dtype=np.int64)
    graphs = [snapshots[int(t)] for t in days]
    for t, g in zip(days, graphs):
        if g.mode != BIPARTITE:
            raise ConfigError(f"day {t}: snapshots must be bipartite-directed graphs")
    embs = []
    for t, g in zip(days, graphs):
        try:
            res = svd_bipartite_embed(g, d, seed=seed)
        except (ConfigError, DataError) as exc:
            raise type(exc)(f"day {t}: {exc}") from exc
        embs.append((res.sources, res.destinations))
    roles, dropped = {}, {}
    for r, role in enumerate((SOURCE, DESTINATION)):
        sets = [e[r].node_ids for e in embs]
        order = [np.argsort(s) for s in sets]
        coords = [e[r].values[o] for e, o in zip(embs, order)]
        sets = [s[o] for s, o in zip(sets, order)]
        roles[role], dropped[role] = temporal_patch_graph(days, sets, coords, lags, d, role)
    return TemporalPatchSet(days, lags, roles, dropped)


def temporal_patches_from_coords(days, node_sets, coords, d, lags=DEFAULT_LAGS, role=SOURCE):
    """Temporal patch set from precomputed daily coordinates (single role)."""
    order = [np.argsort(s) for s in node_sets]
    sets = [np.asarray(s)[o] for s, o in zip(node_sets, order)]
    coords = [np.asarray(c)[o] for c, o in zip(coords, order)]
    pg, dropped = temporal_patch_graph(days, sets, coords, lags, d, role)
    return TemporalPatchSet(np.asarray(days), tuple(lags), {role: pg}, {role: dropped})


def reference_embedding(tps, *, scale_sync=True, seed=0):
    """Align each role's daily patches and take the centroid as reference."""
    out = {}
    for role, pg in tps.roles.items():
        res = align_patches(pg, scale_sync=scale_sync, seed=seed)
        out[role] = Reference(role, res.embedding, res.aligned_patches(pg), res)
    return out


def distance_scores(days, patches, reference, aligned, role=SOURCE):
    """Euclidean distance of every observed (node, day) from the reference."""
    ids, dd, raw = [], [], []
    for t, P, X in zip(days, patches, aligned):
        ids.append(P)
        dd.append(np.full(P.size, t, dtype=np.int64))
        raw.append(np.linalg.norm(reference.rows(P) - X, axis=1))
    return AnomalySeries(role, np.concatenate(ids), np.concatenate(dd), np.concatenate(raw))


def raw_anomaly_scores(tps, references):
    """Raw scores per role; unobserved (node, day) pairs simply have no entry."""
    return {role: distance_scores(tps.days, pg.patches, references[role].embedding,
                                  references[role].aligned, role)
            for role, pg in tps.roles.items()}


def leave_one_out_z(x):
    """Per-entry ``(x_t - mean_{-t}) / std_{-t}`` with the sample deviation.

    Returns ``(z, degenerate)``; degenerate entries (std below 1e-12) get 0.
    """
    x = np.asarray(x, dtype=np.float64)
    c = x.size
    if c < 3:
        raise ValueError("leave-one-out deviation needs at least 3 values")
    off = ~np.eye(c, dtype=bool)
    others = np.broadcast_to(x, (c, c))
    mean = (x.sum() - x) / (c - 1)
    dev = np.where(off, others - mean[:, None], 0.0)
    std = np.sqrt((dev ** 2).sum(axis=1) / (c - 2))
    degenerate = std < DEGENERATE_STD
    z = np.where(degenerate, 0.0, (x - mean) / np.where(degenerate, 1.0, std))
    return z, degenerate


def standardized_scores(series, min_obs=21):
    """Leave-one-out z-scores for every node with at least ``min_obs`` observations."""
    if min_obs < 3:
        raise ConfigError(f"min_obs must be at least 3, got {min_obs}")
    n = series.raw.size
    z = np.full(n, np.nan)
    n_obs = np.zeros(n, dtype=np.int64)
    degenerate = np.zeros(n, dtype=bool)
    order = np.lexsort((series.days, series.node_ids))
    ids = series.node_ids[order]
    starts = np.flatnonzero(np.r_[True, ids[1:] != ids[:-1]])
    ends = np.r_[starts[1:], n]
    for a, b in zip(starts, ends):
        sel = order[a:b]
        n_obs[sel] = b - a
        if b - a >= min_obs:
            z[sel], degenerate[sel] = leave_one_out_z(series.raw[sel])
    scored = n_obs >= min_obs
    return AnomalySeries(series.role, series.node_ids, series.days, series.raw, z, n_obs, scored, degenerate)


def outlier_flags(series, quantile=0.999):
    """Flag standardized scores strictly above their empirical ``quantile``."""
    if not 0.5 < quantile < 1:
        raise ConfigError(f"quantile must lie in (0.5, 1), got {quantile}")
    if series.z is None:
        raise DataError("series has no standardized scores")
    pool = series.z[series.scored]
    if pool.size == 0:
        raise DataError("no node meets the observation minimum; nothing to flag")
    if pool.size < 100:
        warnings.warn(f"only {pool.size} standardized scores; the {quantile} quantile is unreliable",
                      stacklevel=2)
    thr = float(np.quantile(pool, quantile))
    flagged = series.scored & (np.nan_to_num(series.z, nan=-np.inf) > thr)
    days, counts = np.unique(series.days[flagged], return_counts=True)
    per_day = {int(t): 0 for t in np.unique(series.days)}
    per_day.update({int(t): int(c) for t, c in zip(days, counts)})
    return OutlierReport(thr, flagged, per_day)


@dataclass(frozen=True, eq=False)
class SyntheticTemporal:
    tps: TemporalPatchSet
    reference: np.ndarray
    target: int
    anomalous_days: np.ndarray
    natural_std: np.ndarray


def synthetic_temporal(n=200, d=8, num_days=60, *, lags=DEFAULT_LAGS, activity=0.8,
                       sigma=0.1, anomalous_days=3, strength=5.0, seed=0):
    """Daily patches of a fixed latent embedding with one injected anomaly.

    Each node has its own jitter level ``sigma_i`` (uniform in
    ``[0.5, 1.5] * sigma``); its natural per-day positional deviation is
    ``sigma_i * sqrt(d)``. On ``anomalous_days`` random days one target node
    is displaced by ``strength`` times that deviation in a random direction.
    Every day's coordinates then undergo a random similarity transform.
    """
    gen = rng.generator(seed, rng.TEMPORAL)
    X = gen.standard_normal((n, d))
    sig = sigma * gen.uniform(0.5, 1.5, n)
    target = int(gen.integers(n))
    days = np.arange(1, num_days + 1)
    bad = np.sort(gen.choice(days, size=anomalous_days, replace=False))
    node_sets, coords = [], []
    for t in days:
        active = np.flatnonzero(gen.random(n) < activity)
        if t in bad and target not in active:
            active = np.sort(np.append(active, target))
        Y = X[active] + sig[active, None] * gen.standard_normal((active.size, d))
        if t in bad:
            u = gen.standard_normal(d)
            r = int(np.searchsorted(active, target))
            Y[r] += strength * sig[target] * np.sqrt(d) * u / np.linalg.norm(u)
        s = gen.uniform(0.5, 2.0)
        Q = random_orthogonal(d, gen)
        shift = gen.uniform(-10, 10, d)
        node_sets.append(active)
        coords.append(s * Y @ Q.T + shift)
    tps = temporal_patches_from_coords(days, node_sets, coords, d, lags)
    return SyntheticTemporal(tps, X, target, bad, sig * np.sqrt(d))


def detect(tps, *, min_obs=21, quantile=0.999, scale_sync=True, seed=0):
    """Full scoring run: reference, raw scores, z-scores and flags per role."""
    refs = reference_embedding(tps, scale_sync=scale_sync, seed=seed)
    raw = raw_anomaly_scores(tps, refs)
    out = {}
    for role, series in raw.items():
        z = standardized_scores(series, min_obs)
        out[role] = (z, outlier_flags(z, quantile))
    return out
