"""
Low-density-region novelty detection.

Stage one flags a sample as suspicious when it lies outside the alpha-region
of every mixture component. Stage two keeps suspicious samples in a ring
buffer and clusters them incrementally: two buffered samples belong to the
same cluster iff they are connected by a chain of Euclidean epsilon-hops.
A cluster that reaches ``min_pts`` members signals a novel process.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from candies.errors import DataError, InvalidParameterError
from candies.mixture import MixtureModel
from candies.stats import chi2_inverse_cdf

NOISE = -1


@dataclass(frozen=True)
class LdrConfig:
    alpha: float = 0.95
    epsilon: float = 2.0
    min_pts: int = 10
    buffer_capacity: int = 100

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidParameterError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.epsilon <= 0:
            raise InvalidParameterError(f"epsilon must be positive, got {self.epsilon}")
        if self.min_pts < 2:
            raise InvalidParameterError(f"min_pts must be at least 2, got {self.min_pts}")
        if self.buffer_capacity < self.min_pts:
            raise InvalidParameterError("buffer_capacity must be at least min_pts")


@lru_cache(maxsize=256)
def region_radius_sq(dim: int, alpha: float) -> float:
    """Squared Mahalanobis radius enclosing mass ``alpha`` of a ``dim``-variate Gaussian."""
    return chi2_inverse_cdf(dim, alpha)


def is_suspicious(model: MixtureModel, x, alpha: float) -> tuple[bool, float]:
    """Return ``(suspicious, rho)``; suspicious iff ``x`` is outside every alpha-region."""
    rho = region_radius_sq(model.dim, alpha)
    d2 = model.mahalanobis_sq(x)
    return bool(np.all(d2 > rho)), rho


@dataclass
class Entry:
    sample: np.ndarray
    arrival: int
    cluster: int = NOISE


@dataclass
class InsertResult:
    cluster: int
    evicted: np.ndarray | None
    detected: int | None


class SuspicionBuffer:
    """Fixed-capacity buffer of suspicious samples with incremental cluster labels."""

    def __init__(self, config: LdrConfig | None = None):
        self.config = config or LdrConfig()
        self.entries: deque[Entry] = deque()
        self.registry: dict[int, int] = {}
        self._next_id = 0
        self._arrivals = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def n_noise(self) -> int:
        return sum(1 for e in self.entries if e.cluster == NOISE)

    @property
    def n_clusters(self) -> int:
        return len(self.registry)

    def samples(self) -> np.ndarray:
        if not self.entries:
            return np.empty((0, 0))
        return np.vstack([e.sample for e in self.entries])

    def labels(self) -> list[int]:
        return [e.cluster for e in self.entries]

    def members(self, cluster_id: int) -> list[Entry]:
        return [e for e in self.entries if e.cluster == cluster_id]

    def _new_id(self) -> int:
        cid = self._next_id
        self._next_id += 1
        return cid

    def _relabel(self, entries, cid: int) -> None:
        for e in entries:
            if e.cluster != NOISE:
                self.registry[e.cluster] -= 1
                if self.registry[e.cluster] == 0:
                    del self.registry[e.cluster]
            e.cluster = cid
            if cid != NOISE:
                self.registry[cid] = self.registry.get(cid, 0) + 1

    def _components(self, entries: list[Entry]) -> list[list[Entry]]:
        # connected components of the epsilon-graph restricted to ``entries``
        if not entries:
            return []
        pts = np.vstack([e.sample for e in entries])
        adj = np.sum((pts[:, None, :] - pts[None]) ** 2, axis=-1) <= self.config.epsilon ** 2
        seen = np.zeros(len(entries), dtype=bool)
        parts = []
        for start in range(len(entries)):
            if seen[start]:
                continue
            seen[start] = True
            queue = [start]
            part = []
            while queue:
                i = queue.pop()
                part.append(i)
                for j in np.flatnonzero(adj[i] & ~seen):
                    seen[j] = True
                    queue.append(j)
            parts.append([entries[i] for i in sorted(part)])
        return parts

    def _evict_oldest(self) -> np.ndarray:
        old = self.entries.popleft()
        cid = old.cluster
        if cid != NOISE:
            self.registry[cid] -= 1
            if self.registry[cid] == 0:
                del self.registry[cid]
            rest = self.members(cid)
            parts = sorted(self._components(rest), key=lambda p: (-len(p), p[0].arrival))
            for k, part in enumerate(parts):
                if len(part) == 1:
                    self._relabel(part, NOISE)
                elif k > 0:
                    self._relabel(part, self._new_id())
        return old.sample

    def insert(self, x) -> InsertResult:
        """
        Insert a suspicious sample and update the clustering.

        The oldest entry is evicted first when the buffer is full. If the
        nearest buffered neighbour lies within epsilon, the sample joins that
        neighbour's cluster (or opens a new cluster with it when the
        neighbour is noise) and the cluster id is propagated breadth-first
        over the epsilon-neighbourhood, merging any clusters it reaches.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        if self.entries and self.entries[0].sample.shape != x.shape:
            raise DataError("sample dimension does not match buffered samples")
        evicted = None
        if len(self.entries) >= self.config.buffer_capacity:
            evicted = self._evict_oldest()

        entry = Entry(x, self._arrivals)
        self._arrivals += 1
        if not self.entries:
            self.entries.append(entry)
            return InsertResult(NOISE, evicted, None)

        existing = list(self.entries)
        pts = np.vstack([e.sample for e in existing])
        dist2 = np.sum((pts - x) ** 2, axis=1)
        nn = int(np.argmin(dist2))
        self.entries.append(entry)
        eps2 = self.config.epsilon ** 2
        if dist2[nn] > eps2:
            return InsertResult(NOISE, evicted, None)

        neighbour = existing[nn]
        cid = neighbour.cluster if neighbour.cluster != NOISE else self._new_id()
        self._propagate(entry, cid)
        detected = cid if self.registry.get(cid, 0) >= self.config.min_pts else None
        return InsertResult(cid, evicted, detected)

    def _propagate(self, start: Entry, cid: int) -> None:
        entries = list(self.entries)
        pts = np.vstack([e.sample for e in entries])
        eps2 = self.config.epsilon ** 2
        index = {id(e): i for i, e in enumerate(entries)}
        visited = np.zeros(len(entries), dtype=bool)
        queue = deque([index[id(start)]])
        visited[queue[0]] = True
        while queue:
            i = queue.popleft()
            e = entries[i]
            if e.cluster != cid:
                self._relabel([e], cid)
            near = np.sum((pts - pts[i]) ** 2, axis=1) <= eps2
            for j in np.flatnonzero(near & ~visited):
                visited[j] = True
                queue.append(j)

    def extract_cluster(self, cluster_id: int) -> np.ndarray:
        """Remove a cluster from the buffer and return its samples in arrival order."""
        if cluster_id not in self.registry:
            raise KeyError(f"unknown cluster id {cluster_id}")
        members = [e for e in self.entries if e.cluster == cluster_id]
        self.entries = deque(e for e in self.entries if e.cluster != cluster_id)
        del self.registry[cluster_id]
        return np.vstack([e.sample for e in members])

    def nu_2snd(self) -> float:
        """LDR novelty measure ``1 - (clusters + noise) / size``; 0 for an empty buffer."""
        n = len(self.entries)
        if n == 0:
            return 0.0
        return 1.0 - (self.n_clusters + self.n_noise) / n


def nu_2snd(buf: SuspicionBuffer) -> float:
    return buf.nu_2snd()
