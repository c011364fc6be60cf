"""Attributed graphs: loading, validation, normalization and SBM synthesis."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .numcore import make_rng

log = logging.getLogger(__name__)


class GraphValidationError(ValueError):
    pass


class GraphParseError(GraphValidationError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = str(path)
        self.lineno = lineno


@dataclass
class Graph:
    """Undirected attributed graph.

    ``edges`` holds each unordered pair once as ``(u, v)`` with ``u < v``;
    ``adj`` stores both directions and ``norm_adj`` is the self-looped,
    symmetrically degree-normalized propagation operator.
    """

    features: np.ndarray
    edges: np.ndarray
    n_clusters: int
    labels: np.ndarray | None = None
    adj: sp.csr_matrix = field(init=False, repr=False)
    norm_adj: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise GraphValidationError("features must be an N x d0 matrix")
        if not np.all(np.isfinite(self.features)):
            raise GraphValidationError("features contain non-finite values")
        n = self.features.shape[0]
        self.edges = canonical_edges(self.edges, n)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (n,):
                raise GraphValidationError(f"expected {n} labels, got {self.labels.shape[0]}")
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_clusters):
                raise GraphValidationError(f"labels must lie in [0, {self.n_clusters})")
        if self.n_clusters < 1:
            raise GraphValidationError("n_clusters must be positive")
        self.adj = adjacency_from_edges(self.edges, n)
        self.norm_adj = normalize_adjacency(self.adj)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def directed_edges(self):
        """(source, target) index arrays with both directions of every edge, sorted by target."""
        coo = self.adj.tocoo()
        # adj[i, j] stored for edge j -> i: row is the target
        order = np.lexsort((coo.col, coo.row))
        return coo.col[order].astype(np.int64), coo.row[order].astype(np.int64)

    def dense_adj(self) -> np.ndarray:
        return self.adj.toarray()

    def smoothed_features(self) -> np.ndarray:
        return np.asarray(self.norm_adj @ self.features)


def canonical_edges(edges, n: int) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2) if len(edges) else np.zeros((0, 2), dtype=np.int64)
    if e.size and (e.min() < 0 or e.max() >= n):
        raise GraphValidationError(f"edge endpoint out of range for {n} nodes")
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if e.size:
        e = np.unique(e, axis=0)
    return e


def adjacency_from_edges(edges: np.ndarray, n: int) -> sp.csr_matrix:
    if len(edges) == 0:
        return sp.csr_matrix((n, n), dtype=np.float64)
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    a = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n))
    a.sum_duplicates()
    a.data[:] = 1.0
    a.sort_indices()
    return a


def normalize_adjacency(adj: sp.spmatrix) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 with D the degree of A + I."""
    adj = sp.csr_matrix(adj, dtype=np.float64)
    n, m = adj.shape
    if n != m:
        raise GraphValidationError(f"adjacency must be square, got {adj.shape}")
    if abs(adj - adj.T).sum() != 0:
        raise GraphValidationError("adjacency must be symmetric")
    if np.any(adj.diagonal() != 0):
        raise GraphValidationError("adjacency must have a zero diagonal")
    a_hat = (adj + sp.identity(n, format="csr")).tocoo()
    deg = np.asarray(adj.sum(axis=1)).reshape(-1) + 1.0
    # the degree product is an exact integer and commutative, so (i, j) and
    # (j, i) get bit-identical, correctly rounded values
    vals = a_hat.data / np.sqrt(deg[a_hat.row] * deg[a_hat.col])
    out = sp.csr_matrix((vals, (a_hat.row, a_hat.col)), shape=(n, n))
    out.sort_indices()
    return out


# ----------------------------------------------------------------------------
# text files


def _data_lines(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, line


def read_features(path) -> np.ndarray:
    rows, width = [], None
    for lineno, line in _data_lines(path):
        try:
            row = [float(tok) for tok in line.split()]
        except ValueError as exc:
            raise GraphParseError(path, lineno, f"bad number ({exc})") from None
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise GraphParseError(path, lineno, f"expected {width} columns, found {len(row)}")
        if not all(np.isfinite(row)):
            raise GraphParseError(path, lineno, "non-finite feature value")
        rows.append(row)
    if not rows:
        raise GraphParseError(path, 0, "no feature rows")
    return np.array(rows, dtype=np.float64)


def read_edges(path, n: int) -> np.ndarray:
    pairs = []
    for lineno, line in _data_lines(path):
        toks = line.split()
        if len(toks) != 2:
            raise GraphParseError(path, lineno, f"expected 'u v', found {line!r}")
        try:
            u, v = int(toks[0]), int(toks[1])
        except ValueError:
            raise GraphParseError(path, lineno, f"non-integer endpoint in {line!r}") from None
        for x in (u, v):
            if not 0 <= x < n:
                raise GraphParseError(path, lineno, f"endpoint {x} outside [0, {n})")
        pairs.append((u, v))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def read_labels(path, k: int | None = None) -> np.ndarray:
    out = []
    for lineno, line in _data_lines(path):
        try:
            y = int(line)
        except ValueError:
            raise GraphParseError(path, lineno, f"non-integer label {line!r}") from None
        if y < 0 or (k is not None and y >= k):
            raise GraphParseError(path, lineno, f"label {y} outside [0, {k})")
        out.append(y)
    return np.array(out, dtype=np.int64)


def load_graph(features_path, edges_path, labels_path=None, k: int | None = None,
               standardize: bool = False) -> Graph:
    x = read_features(features_path)
    n = x.shape[0]
    edges = read_edges(edges_path, n)
    labels = None
    if labels_path is not None:
        labels = read_labels(labels_path, k)
        if labels.size != n:
            raise GraphParseError(labels_path, 0, f"expected {n} labels, found {labels.size}")
        if k is None:
            k = int(labels.max()) + 1
    if k is None:
        raise GraphValidationError("number of clusters unknown: pass k or a labels file")
    if standardize:
        sd = x.std(axis=0)
        x = (x - x.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    return Graph(features=x, edges=edges, n_clusters=int(k), labels=labels)


def save_graph(graph: Graph, directory) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"features": d / "features.txt", "edges": d / "edges.txt"}
    with open(paths["features"], "w", encoding="utf-8") as fh:
        for row in graph.features:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
    with open(paths["edges"], "w", encoding="utf-8") as fh:
        for u, v in graph.edges:
            fh.write(f"{u} {v}\n")
    if graph.labels is not None:
        paths["labels"] = d / "labels.txt"
        write_labels(paths["labels"], graph.labels)
    return paths


def write_labels(path, labels):
    with open(path, "w", encoding="utf-8") as fh:
        fh.writelines(f"{int(y)}\n" for y in labels)


# ----------------------------------------------------------------------------
# synthetic graphs


def generate_sbm(blocks: int, nodes_per_block: int, p_in: float, p_out: float,
                 feat_dim: int, feat_separation: float, noise_sd: float, seed: int = 0) -> Graph:
    """Stochastic block model with block-centroid Gaussian node features.

    Block b's centroid is ``feat_separation`` times the unit vector along
    feature axis ``b mod feat_dim``.
    """
    if not (0.0 <= p_out <= p_in <= 1.0):
        raise GraphValidationError("need 0 <= p_out <= p_in <= 1")
    if feat_dim < 1 or blocks < 1 or nodes_per_block < 1:
        raise GraphValidationError("blocks, nodes_per_block and feat_dim must be positive")
    if noise_sd < 0:
        raise GraphValidationError("noise_sd must be non-negative")
    rng = make_rng(seed)
    n = blocks * nodes_per_block
    labels = np.repeat(np.arange(blocks), nodes_per_block)
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    edges = np.stack([iu[keep], ju[keep]], axis=1)
    centroids = np.zeros((blocks, feat_dim))
    centroids[np.arange(blocks), np.arange(blocks) % feat_dim] = feat_separation
    x = centroids[labels] + rng.normal(scale=noise_sd, size=(n, feat_dim)) if noise_sd > 0 else centroids[labels].copy()
    return Graph(features=x, edges=edges, n_clusters=blocks, labels=labels)
