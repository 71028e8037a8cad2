"""Appearance clustering: reduce a camera archive to K representative images.

Runs Lloyd's algorithm with k-means++ seeding over externally computed
global-image embeddings, then keeps the image nearest each centroid.
Embeddings are ingested from the per-camera ``AMEM`` binary sidecar; no
neural network runs here.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

AMEM_MAGIC = b"AMEM"
AMEM_VERSION = 1


@dataclass(eq=False)
class EmbeddingSet:
    image_ids: list[str]
    vectors: np.ndarray  # (N, D) float

    def __post_init__(self):
        v = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"expected an (N, D) matrix, got shape {v.shape}")
        if v.shape[0] != len(self.image_ids):
            raise ValueError("one vector per image id required")
        if not np.all(np.isfinite(v)):
            raise ValueError("embeddings contain non-finite values")
        self.vectors = v

    def __len__(self) -> int:
        return len(self.image_ids)


@dataclass(eq=False)
class Clustering:
    k: int
    assignments: dict[str, int]
    centroids: np.ndarray  # (K, D)
    cost: float
    cost_history: list[float] = field(default_factory=list)
    n_iters: int = 0


def _kmeanspp_seeds(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass at the chosen centroids: pick uniformly
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2 / total), rng.random()))
            idx = min(idx, n - 1)
        centroids[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centroids[j]) ** 2, axis=1))
    return centroids


def _assign(x: np.ndarray, centroids: np.ndarray):
    # (N, K) squared distances; fine at archive scale (N <= a few thousand)
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d2, axis=1)
    point_costs = d2[np.arange(x.shape[0]), labels]
    return labels, point_costs


def kmeans(emb: EmbeddingSet, k: int, seed: int, max_iters: int = 100,
           tol: float = 1e-4) -> Clustering:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the relative cost improvement drops below `tol` or after
    `max_iters` iterations.  Cost is non-increasing across iterations;
    an emptied cluster is repaired by stealing the point currently
    farthest from its assigned centroid.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(emb)
    if n < k:
        raise ValueError(f"need at least k={k} points, got {n}")
    x = emb.vectors
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_seeds(x, k, rng)

    labels, point_costs = _assign(x, centroids)
    cost = float(point_costs.sum())
    history = [cost]
    iters = 0
    for _ in range(max_iters):
        new_centroids = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new_centroids[j] = x[members].mean(axis=0)
        labels, point_costs = _assign(x, new_centroids)
        for j in range(k):
            if not np.any(labels == j):
                thief = int(np.argmax(point_costs))
                new_centroids[j] = x[thief]
                labels, point_costs = _assign(x, new_centroids)
        new_cost = float(point_costs.sum())
        iters += 1
        history.append(new_cost)
        improvement = (cost - new_cost) / max(cost, 1e-300)
        centroids = new_centroids
        converged = improvement < tol
        cost = new_cost
        if converged:
            break

    assignments = {img_id: int(lab) for img_id, lab in zip(emb.image_ids, labels)}
    return Clustering(k=k, assignments=assignments, centroids=centroids,
                      cost=cost, cost_history=history, n_iters=iters)


def select_representatives(emb: EmbeddingSet, clustering: Clustering) -> list[str]:
    """Per nonempty cluster, the image nearest its centroid.

    Ties go to the lexicographically smallest id; output is ordered by
    cluster index.
    """
    ids = np.array(emb.image_ids)
    labels = np.array([clustering.assignments[i] for i in emb.image_ids])
    reps = []
    for j in range(clustering.k):
        members = np.flatnonzero(labels == j)
        if members.size == 0:
            continue
        d2 = np.sum((emb.vectors[members] - clustering.centroids[j]) ** 2, axis=1)
        best = d2.min()
        candidates = sorted(ids[members[d2 <= best + 1e-12]])
        reps.append(candidates[0])
    return reps


def reduce_camera(emb: EmbeddingSet, k: int, seed: int, max_iters: int = 100,
                  tol: float = 1e-4) -> list[str]:
    """K representative image ids; cameras with fewer than k images keep all."""
    if len(emb) <= k:
        return sorted(emb.image_ids)
    clustering = kmeans(emb, k, seed, max_iters=max_iters, tol=tol)
    return select_representatives(emb, clustering)


def l2_normalize(emb: EmbeddingSet) -> EmbeddingSet:
    """Optional pre-normalization of embedding rows (config switch;
    clustering runs on raw vectors by default)."""
    norms = np.linalg.norm(emb.vectors, axis=1, keepdims=True)
    return EmbeddingSet(list(emb.image_ids), emb.vectors / np.maximum(norms, 1e-12))


def write_embeddings(path: Path | str, emb: EmbeddingSet) -> None:
    """AMEM binary, little-endian: magic, u32 version, u32 N, u32 D,
    N x D float32 row-major, then N null-terminated id strings."""
    n, d = emb.vectors.shape
    with open(path, "wb") as f:
        f.write(AMEM_MAGIC)
        f.write(struct.pack("<III", AMEM_VERSION, n, d))
        f.write(emb.vectors.astype("<f4").tobytes(order="C"))
        for img_id in emb.image_ids:
            f.write(img_id.encode("utf-8") + b"\x00")


def read_embeddings(path: Path | str) -> EmbeddingSet:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != AMEM_MAGIC:
        raise ValueError(f"{path}: not an AMEM file")
    version, n, d = struct.unpack_from("<III", data, 4)
    if version != AMEM_VERSION:
        raise ValueError(f"{path}: unsupported AMEM version {version}")
    offset = 16
    vectors = np.frombuffer(data, dtype="<f4", count=n * d, offset=offset)
    vectors = vectors.reshape(n, d).astype(np.float64)
    offset += 4 * n * d
    ids = data[offset:].split(b"\x00")[:n]
    if len(ids) != n:
        raise ValueError(f"{path}: truncated id table")
    return EmbeddingSet([s.decode("utf-8") for s in ids], vectors)
