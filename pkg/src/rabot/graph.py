"""Social graph container, on-disk dataset format, and split handling.

Dataset directory layout::

    meta.json                  {"n", "relations", "dims": {numerical, boolean, description, tweet}}
    features_numerical.tsv     one node per line, tab-separated floats
    features_boolean.tsv       same, entries 0/1
    features_description.tsv   same
    tweets.jsonl               {"node": id, "embedding": [...]} zero or more lines per node
    edges_<relation>.tsv       two integer columns
    labels.tsv                 node_id<TAB>label   (absent = unlabeled)
    splits.tsv                 node_id<TAB>train|val|test   (optional)

Edges are undirected within a relation and stored once as ``(min, max)``.
Tweet embeddings are mean-pooled on load; a node without tweets gets zeros.
"""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPLITS = ("train", "val", "test")
TRAIN, VAL, TEST = 0, 1, 2
UNLABELED = -1
MODALITIES = ("numerical", "boolean", "description", "tweet")


class DatasetError(Exception):
    """Base class for dataset validation failures."""

    def __init__(self, message: str, path: Path | str | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}" + (f":{line}" if line is not None else "") + ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingFileError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class EdgeRangeError(DatasetError):
    pass


class LabelValueError(DatasetError):
    pass


class FeatureValueError(DatasetError):
    pass


class SplitError(ValueError):
    pass


def _canonical_edges(edges, n: int, where=None) -> np.ndarray:
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if e.size and (e.min() < 0 or e.max() >= n):
        bad = e[(e < 0).any(axis=1) | (e >= n).any(axis=1)][0]
        raise EdgeRangeError(f"edge ({bad[0]}, {bad[1]}) has an endpoint outside [0, {n})", where)
    e = e[e[:, 0] != e[:, 1]]
    e = np.sort(e, axis=1)
    if len(e):
        e = np.unique(e, axis=0)
    return e.reshape(-1, 2)


@dataclass(frozen=True, eq=False)
class Graph:
    n: int
    relation_names: tuple[str, ...]
    relations: tuple[np.ndarray, ...]
    numerical: np.ndarray
    boolean: np.ndarray
    description: np.ndarray
    tweet: np.ndarray
    labels: np.ndarray
    split: np.ndarray | None = None

    def __post_init__(self):
        if len(self.relations) < 1 or len(self.relations) != len(self.relation_names):
            raise DatasetError("a graph needs at least one relation and one name per relation")
        object.__setattr__(
            self, "relations", tuple(_canonical_edges(e, self.n) for e in self.relations)
        )
        for name in MODALITIES:
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(self.n, -1)
            object.__setattr__(self, name, arr)
        if not np.isin(self.boolean, (0.0, 1.0)).all():
            raise FeatureValueError("boolean features must be exactly 0 or 1")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.shape != (self.n,) or not np.isin(labels, (UNLABELED, 0, 1)).all():
            raise LabelValueError("labels must be a length-n vector over {-1, 0, 1}")
        object.__setattr__(self, "labels", labels)
        if self.split is not None:
            split = np.asarray(self.split, dtype=np.int64)
            if split.shape != (self.n,) or not np.isin(split, (TRAIN, VAL, TEST)).all():
                raise SplitError("every node needs exactly one split tag")
            object.__setattr__(self, "split", split)

    @property
    def dims(self) -> dict[str, int]:
        return {m: getattr(self, m).shape[1] for m in MODALITIES}

    @property
    def num_edges(self) -> int:
        return sum(len(e) for e in self.relations)

    def nodes_in(self, which: int) -> np.ndarray:
        """Labeled node ids carrying split tag ``which``."""
        if self.split is None:
            raise SplitError("graph has no split assignment")
        return np.flatnonzero((self.split == which) & (self.labels != UNLABELED))

    def with_edges(self, relations) -> "Graph":
        return dataclasses.replace(self, relations=tuple(relations))

    def with_split(self, split) -> "Graph":
        return dataclasses.replace(self, split=split)

    def same_as(self, other: "Graph") -> bool:
        if (self.n, self.relation_names) != (other.n, other.relation_names):
            return False
        if any(not np.array_equal(a, b) for a, b in zip(self.relations, other.relations)):
            return False
        if any(not np.array_equal(getattr(self, m), getattr(other, m)) for m in MODALITIES):
            return False
        if not np.array_equal(self.labels, other.labels):
            return False
        if (self.split is None) != (other.split is None):
            return False
        return self.split is None or np.array_equal(self.split, other.split)


# ----------------------------------------------------------------------------
# loading / saving


def _read_matrix(path: Path, n: int, dim: int) -> np.ndarray:
    if not path.exists():
        raise MissingFileError("required file is missing", path)
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            fields = line.split("\t") if line else []
            if len(fields) != dim:
                raise DimensionMismatchError(f"expected {dim} columns, found {len(fields)}", path, lineno)
            try:
                rows.append([float(x) for x in fields])
            except ValueError:
                raise FeatureValueError("non-numeric feature value", path, lineno) from None
    if len(rows) != n:
        raise DimensionMismatchError(f"expected {n} node rows, found {len(rows)}", path)
    return np.array(rows, dtype=np.float64).reshape(n, dim)


def _read_int_pairs(path: Path):
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2:
                raise DimensionMismatchError("expected two tab-separated columns", path, lineno)
            yield lineno, fields


def load_dataset(path) -> Graph:
    root = Path(path)
    meta_path = root / "meta.json"
    if not meta_path.exists():
        raise MissingFileError("required file is missing", meta_path)
    meta = json.loads(meta_path.read_text())
    n = int(meta["n"])
    dims = meta["dims"]
    numerical = _read_matrix(root / "features_numerical.tsv", n, int(dims["numerical"]))
    boolean = _read_matrix(root / "features_boolean.tsv", n, int(dims["boolean"]))
    bad = np.argwhere(~np.isin(boolean, (0.0, 1.0)))
    if len(bad):
        r, c = bad[0]
        raise FeatureValueError(
            f"boolean value {boolean[r, c]!r} not in {{0, 1}}", root / "features_boolean.tsv", int(r) + 1
        )
    description = _read_matrix(root / "features_description.tsv", n, int(dims["description"]))

    tdim = int(dims["tweet"])
    tsum = np.zeros((n, tdim))
    tcount = np.zeros(n)
    tweets_path = root / "tweets.jsonl"
    if not tweets_path.exists():
        raise MissingFileError("required file is missing", tweets_path)
    with open(tweets_path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            node, emb = int(rec["node"]), rec["embedding"]
            if not 0 <= node < n:
                raise EdgeRangeError(f"tweet node id {node} outside [0, {n})", tweets_path, lineno)
            if len(emb) != tdim:
                raise DimensionMismatchError(f"tweet embedding has {len(emb)} dims, expected {tdim}", tweets_path, lineno)
            tsum[node] += emb
            tcount[node] += 1
    tweet = np.divide(tsum, tcount[:, None], out=np.zeros_like(tsum), where=tcount[:, None] > 0)

    relations = []
    for name in meta["relations"]:
        epath = root / f"edges_{name}.tsv"
        if not epath.exists():
            raise MissingFileError("required file is missing", epath)
        edges = []
        for lineno, (a, b) in _read_int_pairs(epath):
            i, j = int(a), int(b)
            if not (0 <= i < n and 0 <= j < n):
                raise EdgeRangeError(f"edge ({i}, {j}) has an endpoint outside [0, {n})", epath, lineno)
            edges.append((i, j))
        relations.append(_canonical_edges(edges, n, epath))

    labels = np.full(n, UNLABELED, dtype=np.int64)
    lpath = root / "labels.tsv"
    if not lpath.exists():
        raise MissingFileError("required file is missing", lpath)
    for lineno, (a, b) in _read_int_pairs(lpath):
        node = int(a)
        if not 0 <= node < n:
            raise EdgeRangeError(f"label node id {node} outside [0, {n})", lpath, lineno)
        if b.strip() not in ("0", "1"):
            raise LabelValueError(f"unknown label value {b.strip()!r}", lpath, lineno)
        labels[node] = int(b)

    split = None
    spath = root / "splits.tsv"
    if spath.exists():
        split = np.full(n, -1, dtype=np.int64)
        for lineno, (a, b) in _read_int_pairs(spath):
            node, tag = int(a), b.strip()
            if tag not in SPLITS:
                raise SplitError(f"{spath}:{lineno}: unknown split tag {tag!r}")
            split[node] = SPLITS.index(tag)
        if (split < 0).any():
            raise SplitError(f"{spath}: node {int(np.argmax(split < 0))} has no split tag")

    return Graph(
        n=n,
        relation_names=tuple(meta["relations"]),
        relations=tuple(relations),
        numerical=numerical,
        boolean=boolean,
        description=description,
        tweet=tweet,
        labels=labels,
        split=split,
    )


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_matrix(path: Path, m: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in m:
            fh.write("\t".join(_fmt(v) for v in row) + "\n")


def save_dataset(g: Graph, path) -> Path:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    meta = {"n": g.n, "relations": list(g.relation_names), "dims": g.dims}
    (root / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    _write_matrix(root / "features_numerical.tsv", g.numerical)
    _write_matrix(root / "features_boolean.tsv", g.boolean)
    _write_matrix(root / "features_description.tsv", g.description)
    with open(root / "tweets.jsonl", "w") as fh:
        for i in range(g.n):
            if np.any(g.tweet[i] != 0):
                fh.write(json.dumps({"node": i, "embedding": [float(v) for v in g.tweet[i]]}) + "\n")
    for name, edges in zip(g.relation_names, g.relations):
        with open(root / f"edges_{name}.tsv", "w") as fh:
            for i, j in edges:
                fh.write(f"{i}\t{j}\n")
    with open(root / "labels.tsv", "w") as fh:
        for i, y in enumerate(g.labels):
            if y != UNLABELED:
                fh.write(f"{i}\t{y}\n")
    if g.split is not None:
        with open(root / "splits.tsv", "w") as fh:
            for i, s in enumerate(g.split):
                fh.write(f"{i}\t{SPLITS[s]}\n")
    return root


# ----------------------------------------------------------------------------
# splits and edge surgery


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.7
    val: float = 0.2
    test: float = 0.1
    seed: int = 0

    def __post_init__(self):
        fr = self.fractions
        if min(fr) < 0 or abs(sum(fr) - 1.0) > 1e-9:
            raise SplitError(f"split fractions must be nonnegative and sum to 1, got {fr}")

    @property
    def fractions(self) -> tuple[float, float, float]:
        return (self.train, self.val, self.test)


def _allocate(count: int, fractions) -> list[int]:
    # largest-remainder rounding; ties go to the earlier split
    raw = [count * f for f in fractions]
    alloc = [math.floor(r + 1e-9) for r in raw]
    rem = sorted(range(len(raw)), key=lambda i: (-(raw[i] - alloc[i]), i))
    for i in rem[: count - sum(alloc)]:
        alloc[i] += 1
    return alloc


def assign_splits(g: Graph, spec: SplitSpec) -> Graph:
    """Stratified train/val/test assignment, deterministic in ``spec.seed``."""
    if (g.labels == UNLABELED).all():
        raise SplitError("graph has no labels to stratify on")
    rng = np.random.default_rng(spec.seed)
    used = sum(f > 0 for f in spec.fractions)
    split = np.empty(g.n, dtype=np.int64)
    for cls in (0, 1, UNLABELED):
        members = np.flatnonzero(g.labels == cls)
        if cls != UNLABELED and len(members) < used:
            raise SplitError(f"class {cls} has {len(members)} nodes, fewer than {used} non-empty splits")
        members = rng.permutation(members)
        start = 0
        for tag, k in enumerate(_allocate(len(members), spec.fractions)):
            split[members[start : start + k]] = tag
            start += k
    return g.with_split(split)


def remove_cross_class_edges(g: Graph) -> Graph:
    """Copy of ``g`` with every edge joining differently-labeled nodes removed."""
    if (g.labels == UNLABELED).any():
        raise LabelValueError("remove_cross_class_edges needs every node labeled")
    kept = [e[g.labels[e[:, 0]] == g.labels[e[:, 1]]] for e in g.relations]
    return g.with_edges(kept)
