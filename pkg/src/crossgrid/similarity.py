"""Pairwise distances, agglomerative clustering, threshold cuts, matrix scaling.

The agglomerative linkage is written out explicitly (Lance-Williams
updates) instead of delegating to a library so the merge tie-break is
pinned down: among equal-distance candidates we merge the pair with the
lexicographically smallest (i, j) node-id pair.  Leaves are numbered
0..n-1 in input order; the k-th merge creates node n+k.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metadata import EncodedMatrix

LINKAGE_METHODS = ("single", "complete", "average")


class SimilarityError(ValueError):
    """Invalid distance matrix, tree, or cut parameter."""


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric non-negative distances with a zero diagonal."""

    ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        n = len(self.ids)
        if v.shape != (n, n):
            raise SimilarityError(f"expected {n}x{n} matrix, got {v.shape}")
        if n and not np.isfinite(v).all():
            raise SimilarityError("distance matrix contains non-finite entries")
        if n and (v < 0).any():
            raise SimilarityError("distance matrix contains negative entries")
        if n and not np.allclose(v, v.T, atol=1e-12, rtol=0.0):
            raise SimilarityError("distance matrix is not symmetric")
        if n and np.abs(np.diagonal(v)).max() > 0:
            raise SimilarityError("distance matrix diagonal is not zero")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    count: int


@dataclass(frozen=True)
class LinkageTree:
    """Sequence of n-1 merges over leaves 0..n-1 (node n+k = k-th merge)."""

    ids: tuple[str, ...]
    merges: tuple[Merge, ...]
    method: str

    @property
    def n_leaves(self) -> int:
        return len(self.ids)

    @property
    def heights(self) -> np.ndarray:
        return np.array([m.height for m in self.merges])

    def members(self, node: int) -> list[int]:
        """Leaf indices under a node, in ascending order."""
        n = self.n_leaves
        if node < n:
            return [node]
        merge = self.merges[node - n]
        return sorted(self.members(merge.left) + self.members(merge.right))


@dataclass(frozen=True)
class ClusterAssignment:
    """Flat clustering: building_id -> dense label starting at 0."""

    labels: dict[str, int]

    def __post_init__(self):
        values = sorted(set(self.labels.values()))
        if values != list(range(len(values))):
            raise SimilarityError(f"cluster labels not dense from 0: {values}")

    @property
    def n_clusters(self) -> int:
        return len(set(self.labels.values()))

    def groups(self) -> list[tuple[str, ...]]:
        out: dict[int, list[str]] = {}
        for bid, lab in self.labels.items():
            out.setdefault(lab, []).append(bid)
        return [tuple(sorted(out[k])) for k in sorted(out)]


def pairwise_euclidean(m: EncodedMatrix) -> DistanceMatrix:
    """Euclidean distances between the rows of an encoded matrix."""
    x = m.values
    if x.shape[0] < 2:
        raise SimilarityError("need at least 2 rows to compute pairwise distances")
    diff = x[:, None, :] - x[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    d = np.sqrt(np.maximum(sq, 0.0))
    d = (d + d.T) / 2.0  # exact symmetry
    np.fill_diagonal(d, 0.0)
    return DistanceMatrix(m.ids, d)


def linkage(d: DistanceMatrix, method: str = "average") -> LinkageTree:
    """Agglomerative merge sequence under single / complete / average linkage."""
    if method not in LINKAGE_METHODS:
        raise SimilarityError(f"unknown linkage method {method!r}; use one of {LINKAGE_METHODS}")
    n = d.n
    if n < 2:
        raise SimilarityError("need at least 2 points to cluster")

    # working distances keyed by active node id
    work: dict[int, dict[int, float]] = {
        i: {j: float(d.values[i, j]) for j in range(n) if j != i} for i in range(n)
    }
    size = {i: 1 for i in range(n)}
    active = set(range(n))
    merges: list[Merge] = []

    for step in range(n - 1):
        best = None
        for i in sorted(active):
            for j in sorted(work[i]):
                if j <= i:
                    continue
                key = (work[i][j], i, j)
                if best is None or key < best:
                    best = key
        dist, i, j = best
        new = n + step
        merges.append(Merge(i, j, dist, size[i] + size[j]))

        work[new] = {}
        for k in active - {i, j}:
            dik, djk = work[k][i], work[k][j]
            if method == "single":
                dnew = min(dik, djk)
            elif method == "complete":
                dnew = max(dik, djk)
            else:
                dnew = (size[i] * dik + size[j] * djk) / (size[i] + size[j])
            work[new][k] = dnew
            work[k][new] = dnew
            del work[k][i], work[k][j]
        size[new] = size[i] + size[j]
        del work[i], work[j]
        active -= {i, j}
        active.add(new)

    return LinkageTree(d.ids, tuple(merges), method)


def cut_at_fraction(tree: LinkageTree, fraction: float) -> ClusterAssignment:
    """Flat clusters from merges strictly below fraction x (max merge height)."""
    if not 0.0 < fraction <= 1.0:
        raise SimilarityError(f"fraction must be in (0, 1], got {fraction}")
    n = tree.n_leaves
    threshold = fraction * max((m.height for m in tree.merges), default=0.0)

    parent = list(range(n))

    def find(a: int) -> int:
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    node_root = {i: i for i in range(n)}
    for k, merge in enumerate(tree.merges):
        ra, rb = find(node_root[merge.left]), find(node_root[merge.right])
        if merge.height < threshold:
            parent[rb] = ra
        node_root[n + k] = ra  # representative for later merges

    roots: dict[int, int] = {}
    labels: dict[str, int] = {}
    for leaf in range(n):
        r = find(leaf)
        if r not in roots:
            roots[r] = len(roots)  # label order follows smallest member index
        labels[tree.ids[leaf]] = roots[r]
    return ClusterAssignment(labels)


def symmetrize(e: np.ndarray, ids: tuple[str, ...] | None = None) -> DistanceMatrix:
    """Average each entry with its transpose partner; force a zero diagonal."""
    e = np.asarray(e, dtype=float)
    if e.ndim != 2 or e.shape[0] != e.shape[1]:
        raise SimilarityError(f"symmetrize needs a square matrix, got shape {e.shape}")
    out = (e + e.T) / 2.0
    np.fill_diagonal(out, 0.0)
    if ids is None:
        ids = tuple(str(i) for i in range(e.shape[0]))
    return DistanceMatrix(tuple(ids), out)


def minmax_scale_matrix(e: np.ndarray) -> np.ndarray:
    """Scale a whole matrix to [0, 1]; a constant matrix becomes all zeros."""
    e = np.asarray(e, dtype=float)
    if e.size == 0:
        raise SimilarityError("cannot scale an empty matrix")
    lo, hi = e.min(), e.max()
    if hi == lo:
        return np.zeros_like(e)
    return (e - lo) / (hi - lo)


def write_linkage(tree: LinkageTree, path) -> None:
    """Export merges as delimited text, one ``left,right,height,count`` per line."""
    lines = [f"{m.left},{m.right},{m.height!r},{m.count}" for m in tree.merges]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# left,right,height,count\n")
        fh.write("\n".join(lines) + "\n")
