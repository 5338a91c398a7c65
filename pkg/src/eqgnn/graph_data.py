"""Node/edge file loading, adjacency normalisation and seeded splits."""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .rng import substream


class DatasetError(ValueError):
    """Malformed dataset files or manifest."""


class MissingColumnError(DatasetError):
    pass


class FeatureValueError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class SensitiveValueError(DatasetError):
    pass


class UnknownNodeError(DatasetError):
    pass


@dataclass(frozen=True)
class Schema:
    """Which CSV columns hold what.

    ``feature_columns=None`` means every column that is not the id, label or
    sensitive column (minus ``exclude_columns``).  Nodes whose label is in
    ``drop_label_values`` are removed together with their edges.
    """

    id_column: str = "id"
    label_column: str = "label"
    sensitive_column: str = "sensitive"
    feature_columns: tuple[str, ...] | None = None
    exclude_columns: tuple[str, ...] = ()
    class_count: int | None = None
    drop_label_values: tuple[int, ...] = ()
    sensitive_as_feature: bool = False


@dataclass(frozen=True)
class GraphDataset:
    features: np.ndarray
    labels: np.ndarray
    sensitive: np.ndarray
    adjacency: sp.csr_matrix
    class_count: int
    node_ids: tuple[str, ...] = ()
    feature_names: tuple[str, ...] = ()
    # unnormalised undirected edge list (i < j), kept for neighbourhood queries
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        n = self.features.shape[0]
        if self.labels.shape != (n,) or self.sensitive.shape != (n,):
            raise DatasetError("labels, sensitive and feature rows must all have node_count entries")
        if self.adjacency.shape != (n, n):
            raise DatasetError(f"adjacency shape {self.adjacency.shape} for {n} nodes")

    @property
    def node_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def index_of(self, node_id: str) -> int:
        try:
            return self.node_ids.index(str(node_id))
        except ValueError:
            raise UnknownNodeError(f"unknown node id {node_id!r}") from None


@dataclass(frozen=True)
class Split:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    seed: int


def normalize_adjacency(edges: np.ndarray, n: int) -> sp.csr_matrix:
    """``D^-1/2 (A + I) D^-1/2`` for an undirected edge list."""
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    rows = np.concatenate([edges[:, 0], edges[:, 1], np.arange(n)])
    cols = np.concatenate([edges[:, 1], edges[:, 0], np.arange(n)])
    a = sp.coo_matrix((np.ones(rows.size), (rows, cols)), shape=(n, n)).tocsr()
    a.sum_duplicates()
    a.data[:] = 1.0
    deg = np.asarray(a.sum(axis=1)).ravel()
    d = 1.0 / np.sqrt(deg)
    coo = a.tocoo()
    data = d[coo.row] * d[coo.col]
    out = sp.csr_matrix((data, (coo.row, coo.col)), shape=(n, n))
    out.sort_indices()
    return out


def _canonical_edges(pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    if lo.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


def build_dataset(features, labels, sensitive, edges, class_count: int | None = None,
                  node_ids=None, feature_names=()) -> GraphDataset:
    """Assemble a dataset from in-memory arrays and an index edge list."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise DatasetError("features must be a 2-d array")
    labels = np.asarray(labels, dtype=np.int64)
    sensitive = np.asarray(sensitive, dtype=np.int64)
    n = features.shape[0]
    if class_count is None:
        class_count = int(labels.max()) + 1 if n else 0
    if n and (labels.min() < 0 or labels.max() >= class_count):
        raise LabelRangeError(f"labels must lie in 0..{class_count - 1}")
    if n and not np.isin(sensitive, (0, 1)).all():
        raise SensitiveValueError("sensitive attribute must be binary 0/1")
    edges = _canonical_edges(edges)
    if edges.size and (edges.min() < 0 or edges.max() >= n):
        raise UnknownNodeError("edge references a node index outside the graph")
    if node_ids is None:
        node_ids = [str(i) for i in range(n)]
    return GraphDataset(
        features=features, labels=labels, sensitive=sensitive,
        adjacency=normalize_adjacency(edges, n), class_count=int(class_count),
        node_ids=tuple(str(x) for x in node_ids), feature_names=tuple(feature_names),
        edges=edges,
    )


def _parse_int(value: str, what: str, node: str, exc: type[DatasetError]) -> int:
    try:
        f = float(value)
    except ValueError:
        raise exc(f"node {node!r}: {what} {value!r} is not numeric") from None
    if not f.is_integer():
        raise exc(f"node {node!r}: {what} {value!r} is not an integer")
    return int(f)


def read_edge_file(path: str) -> list[tuple[str, str]]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 2:
                raise DatasetError(f"{path}:{lineno}: expected 'src dst', got {line!r}")
            pairs.append((parts[0], parts[1]))
    return pairs


def load_dataset(nodes_path: str, edges_path: str, schema: Schema = Schema()) -> GraphDataset:
    with open(nodes_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)

    needed = [schema.id_column, schema.label_column, schema.sensitive_column]
    if schema.feature_columns is not None:
        needed += list(schema.feature_columns)
    missing = [c for c in needed if c not in header]
    if missing:
        raise MissingColumnError(f"{nodes_path}: missing columns {missing}")

    if schema.feature_columns is not None:
        feat_cols = list(schema.feature_columns)
    else:
        skip = {schema.id_column, schema.label_column, *schema.exclude_columns}
        if not schema.sensitive_as_feature:
            skip.add(schema.sensitive_column)
        feat_cols = [c for c in header if c not in skip]
    if not feat_cols:
        raise MissingColumnError(f"{nodes_path}: no feature columns")

    ids, labels, sens, feats = [], [], [], []
    for row in rows:
        nid = row[schema.id_column].strip()
        label = _parse_int(row[schema.label_column], "label", nid, LabelRangeError)
        if label in schema.drop_label_values:
            continue
        a = _parse_int(row[schema.sensitive_column], "sensitive", nid, SensitiveValueError)
        if a not in (0, 1):
            raise SensitiveValueError(f"node {nid!r}: sensitive value {a} outside {{0,1}}")
        vec = []
        for c in feat_cols:
            try:
                vec.append(float(row[c]))
            except (TypeError, ValueError):
                raise FeatureValueError(f"node {nid!r}: feature {c!r}={row[c]!r} is not numeric") from None
        ids.append(nid)
        labels.append(label)
        sens.append(a)
        feats.append(vec)

    if len(set(ids)) != len(ids):
        raise DatasetError(f"{nodes_path}: duplicate node ids")
    k = schema.class_count
    if k is None:
        k = max(labels) + 1 if labels else 0
    bad = [(i, y) for i, y in zip(ids, labels) if not 0 <= y < k]
    if bad:
        raise LabelRangeError(f"node {bad[0][0]!r}: label {bad[0][1]} outside 0..{k - 1}")

    index = {nid: i for i, nid in enumerate(ids)}
    dropped = set()
    if schema.drop_label_values:
        for row in rows:
            nid = row[schema.id_column].strip()
            if nid not in index:
                dropped.add(nid)
    pairs = []
    for src, dst in read_edge_file(edges_path):
        if src in dropped or dst in dropped:
            continue
        for end in (src, dst):
            if end not in index:
                raise UnknownNodeError(f"{edges_path}: edge references unknown node id {end!r}")
        pairs.append((index[src], index[dst]))

    return build_dataset(
        np.array(feats, dtype=np.float64).reshape(len(ids), len(feat_cols)),
        labels, sens, np.array(pairs, dtype=np.int64).reshape(-1, 2),
        class_count=k, node_ids=ids, feature_names=feat_cols,
    )


def save_dataset(dataset: GraphDataset, nodes_path: str, edges_path: str) -> Schema:
    """Write a dataset in the loader's format; returns the matching schema."""
    names = list(dataset.feature_names) or [f"f{j}" for j in range(dataset.feature_dim)]
    with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label", "sensitive", *names])
        for i in range(dataset.node_count):
            w.writerow([dataset.node_ids[i], int(dataset.labels[i]), int(dataset.sensitive[i]),
                        *(repr(float(x)) for x in dataset.features[i])])
    with open(edges_path, "w", encoding="utf-8") as fh:
        for a, b in dataset.edges:
            fh.write(f"{dataset.node_ids[a]} {dataset.node_ids[b]}\n")
    return Schema(feature_columns=tuple(names), class_count=dataset.class_count)


def k_hop_nodes(adjacency: sp.spmatrix, node: int, hops: int = 2) -> np.ndarray:
    """Sorted indices within ``hops`` edges of ``node``, the node included."""
    adj = sp.csr_matrix(adjacency)
    seen = {int(node)}
    frontier = [int(node)]
    for _ in range(hops):
        nxt = []
        for u in frontier:
            for v in adj.indices[adj.indptr[u]:adj.indptr[u + 1]]:
                if int(v) not in seen:
                    seen.add(int(v))
                    nxt.append(int(v))
        frontier = nxt
    return np.array(sorted(seen), dtype=np.int64)


# ----------------------------------------------------------------- manifest

def load_manifest(path: str) -> tuple[GraphDataset, dict]:
    """Load the JSON manifest and the dataset it points to.

    Relative file paths resolve against the manifest's directory.
    """
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    base = os.path.dirname(os.path.abspath(path))
    try:
        nodes = os.path.join(base, manifest["nodes"])
        edges = os.path.join(base, manifest["edges"])
    except KeyError as e:
        raise DatasetError(f"{path}: manifest needs key {e.args[0]!r}") from None
    cols = manifest.get("feature_columns")
    schema = Schema(
        id_column=manifest.get("id_column", "id"),
        label_column=manifest.get("label_column", "label"),
        sensitive_column=manifest.get("sensitive_column", "sensitive"),
        feature_columns=tuple(cols) if cols is not None else None,
        exclude_columns=tuple(manifest.get("exclude_columns", ())),
        class_count=manifest.get("class_count"),
        drop_label_values=tuple(manifest.get("drop_label_values", ())),
        sensitive_as_feature=bool(manifest.get("sensitive_as_feature", False)),
    )
    return load_dataset(nodes, edges, schema), manifest


def write_manifest(path: str, nodes: str, edges: str, schema: Schema, **extra) -> None:
    doc = {
        "nodes": nodes, "edges": edges,
        "id_column": schema.id_column, "label_column": schema.label_column,
        "sensitive_column": schema.sensitive_column,
        "feature_columns": list(schema.feature_columns) if schema.feature_columns else None,
        "class_count": schema.class_count, **extra,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


# -------------------------------------------------------------------- splits

def split_sizes(n: int, ratios=(0.5, 0.25, 0.25)) -> tuple[int, int, int]:
    """Floor every share, then hand the leftover nodes out train-first."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"split ratios must sum to 1, got {sum(ratios)!r}")
    if any(r < 0 for r in ratios):
        raise ValueError("split ratios must be non-negative")
    sizes = [math.floor(n * r) for r in ratios]
    rest = n - sum(sizes)
    i = 0
    while rest > 0:
        sizes[i % 3] += 1
        rest -= 1
        i += 1
    return tuple(sizes)


def make_split(dataset: GraphDataset | int, seed: int, ratios=(0.5, 0.25, 0.25)) -> Split:
    n = dataset if isinstance(dataset, int) else dataset.node_count
    if n <= 0:
        raise ValueError("cannot split an empty dataset")
    n_tr, n_va, _ = split_sizes(n, ratios)
    perm = substream(seed, "split").permutation(n)
    return Split(
        train_idx=np.sort(perm[:n_tr]),
        val_idx=np.sort(perm[n_tr:n_tr + n_va]),
        test_idx=np.sort(perm[n_tr + n_va:]),
        seed=int(seed),
    )


def standardize_features(dataset: GraphDataset, split: Split, enabled: bool = True) -> GraphDataset:
    """Zero-mean/unit-variance columns using train-node statistics only."""
    if not enabled:
        return dataset
    if len(split.train_idx) == 0:
        raise ValueError("standardisation needs a non-empty train set")
    x = dataset.features
    train = x[split.train_idx]
    mu = train.mean(axis=0)
    sd = train.std(axis=0)
    const_cols = sd == 0
    mu = np.where(const_cols, 0.0, mu)
    sd = np.where(const_cols, 1.0, sd)
    return replace(dataset, features=(x - mu) / sd)


# ------------------------------------------------------------ toy generator

def make_biased_graph(n: int = 400, n_features: int = 16, class_count: int = 2,
                      seed: int = 0, bias: float = 1.0, homophily: float = 0.8,
                      avg_degree: float = 8.0, group_ratio: float = 3.0) -> GraphDataset:
    """Synthetic graph where the sensitive group leaks into features and edges.

    Labels depend on a feature signal; a second feature block is shifted by
    ``bias * (2a - 1)`` and edges prefer same-group endpoints with probability
    ``homophily``.  Used for smoke runs and tests; not a stand-in for real data.
    """
    rng = np.random.default_rng(seed)
    a = (rng.random(n) < 1.0 / (1.0 + group_ratio)).astype(np.int64)
    a = 1 - a  # majority group is 1 when group_ratio > 1
    y = rng.integers(0, class_count, size=n)
    # group-dependent base rates give a real label/attribute association
    flip = rng.random(n) < 0.25 * bias
    y = np.where(flip & (a == 1), 0, y)
    centers = rng.normal(size=(class_count, n_features // 2))
    x_sig = centers[y] + rng.normal(scale=1.5, size=(n, n_features // 2))
    x_bias = rng.normal(size=(n, n_features - n_features // 2))
    x_bias[:, 0] += bias * (2 * a - 1)
    x = np.concatenate([x_sig, x_bias], axis=1)
    m = int(n * avg_degree / 2)
    src = rng.integers(0, n, size=m)
    same = rng.random(m) < homophily
    dst = np.empty(m, dtype=np.int64)
    groups = [np.flatnonzero(a == g) for g in (0, 1)]
    for k in range(m):
        pool = groups[a[src[k]]] if same[k] else groups[1 - a[src[k]]]
        if pool.size == 0:
            pool = np.arange(n)
        dst[k] = pool[rng.integers(pool.size)]
    return build_dataset(x, y, a, np.stack([src, dst], axis=1), class_count=class_count,
                         feature_names=[f"x{j}" for j in range(n_features)])
