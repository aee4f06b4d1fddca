"""Graph data model, JSON-Lines I/O, splits and synthetic tasks."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPLIT_NAMES = ("train", "valid", "test")
TASKS = {"triangle-count": "regression", "degree-parity": "classification"}


class GraphParseError(ValueError):
    """A JSON-Lines record failed validation."""

    def __init__(self, message: str, line: int | None = None, field: str | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = ", ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.field = field


@dataclass(frozen=True, eq=False)
class Graph:
    """Labelled graph; undirected graphs hold both directions of every edge.

    ``edges`` is an (E, 2) array of ``(src, dst)`` rows sorted by src then dst,
    with ``edge_labels`` aligned to it.
    """

    node_labels: np.ndarray
    edges: np.ndarray
    edge_labels: np.ndarray
    directed: bool = False

    def __post_init__(self):
        for name in ("node_labels", "edges", "edge_labels"):
            getattr(self, name).setflags(write=False)

    @property
    def num_nodes(self) -> int:
        return self.node_labels.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in self.edges[self.edges[:, 0] == i, 1]]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.num_nodes, self.num_nodes), dtype=np.int64)
        a[self.edges[:, 0], self.edges[:, 1]] = 1
        return a

    def permute(self, perm: Sequence[int]) -> "Graph":
        """Relabel nodes so old node ``i`` becomes node ``perm[i]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        edges = perm[self.edges] if self.num_edges else self.edges
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        return Graph(self.node_labels[inv], edges[order], self.edge_labels[order], self.directed)

    def same_as(self, other: "Graph") -> bool:
        return (
            self.directed == other.directed
            and np.array_equal(self.node_labels, other.node_labels)
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.edge_labels, other.edge_labels)
        )


@dataclass(frozen=True, eq=False)
class LabeledExample:
    graph: Graph
    target: float


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[int, ...]
    valid: tuple[int, ...]
    test: tuple[int, ...]

    def indices(self, name: str) -> tuple[int, ...]:
        if name not in SPLIT_NAMES:
            raise ValueError(f"unknown split {name!r}; expected one of {SPLIT_NAMES}")
        return getattr(self, name)


def make_graph(node_labels, edges, edge_labels, directed: bool = False, allow_self_loops: bool = False) -> Graph:
    """Validate raw arrays and build a :class:`Graph`.

    Unless ``directed`` is set, each edge is materialised in both directions
    (an edge already listed both ways is kept once).
    """
    node_labels = np.asarray(node_labels, dtype=np.int64)
    if node_labels.ndim == 1:
        node_labels = node_labels[:, None]
    n = node_labels.shape[0]
    if n < 1:
        raise GraphParseError("graph needs at least one node", field="nodes")
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    edge_labels = np.asarray(edge_labels, dtype=np.int64)
    if edge_labels.ndim == 1:
        edge_labels = edge_labels.reshape(len(edges), -1)
    if edge_labels.shape[0] != edges.shape[0]:
        raise GraphParseError("edge label count does not match edge count", field="edges")
    for k, (s, d) in enumerate(edges):
        if not 0 <= s < n:
            raise GraphParseError(f"src {s} out of range", field=f"edges[{k}]")
        if not 0 <= d < n:
            raise GraphParseError(f"dst {d} out of range", field=f"edges[{k}]")
        if s == d and not allow_self_loops:
            raise GraphParseError(f"self-loop on node {s}", field=f"edges[{k}]")

    if not directed:
        seen: dict[tuple[int, int], tuple] = {}
        for (s, d), lab in zip(edges.tolist(), edge_labels.tolist()):
            for key in ((s, d), (d, s)):
                prev = seen.get(key)
                if prev is not None and prev != tuple(lab):
                    raise GraphParseError(f"edge {key} listed with conflicting labels", field="edges")
                seen[key] = tuple(lab)
        keys = sorted(seen)
        width = edge_labels.shape[1] if edge_labels.ndim == 2 else 0
        edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
        edge_labels = np.array([seen[k] for k in keys], dtype=np.int64).reshape(len(keys), width)
    elif len(edges):
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        edges, edge_labels = edges[order], edge_labels[order]
    return Graph(node_labels.copy(), edges.copy(), edge_labels.copy(), directed=directed)


def _int_tuple(value, line, name) -> list[int]:
    if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
        raise GraphParseError("expected a list of integers", line, name)
    return value


def parse_graph_record(record: str | dict, line: int | None = None, task: str | None = None,
                       allow_self_loops: bool = False) -> LabeledExample:
    """Parse one JSON-Lines record into a validated example.

    ``task`` ("regression" or "classification") adds target checks.
    """
    if isinstance(record, str):
        try:
            record = json.loads(record)
        except json.JSONDecodeError as exc:
            raise GraphParseError(f"invalid JSON ({exc.msg})", line) from None
    if not isinstance(record, dict):
        raise GraphParseError("record must be a JSON object", line)
    for key in ("nodes", "edges", "target"):
        if key not in record:
            raise GraphParseError("missing", line, key)

    nodes = record["nodes"]
    if not isinstance(nodes, list) or not nodes:
        raise GraphParseError("expected a non-empty list", line, "nodes")
    node_labels = [_int_tuple(v, line, f"nodes[{i}]") for i, v in enumerate(nodes)]
    if len({len(v) for v in node_labels}) != 1:
        raise GraphParseError("node label tuples differ in length", line, "nodes")

    raw_edges = record["edges"]
    if not isinstance(raw_edges, list):
        raise GraphParseError("expected a list", line, "edges")
    pairs, labels = [], []
    for k, e in enumerate(raw_edges):
        name = f"edges[{k}]"
        if not isinstance(e, list) or len(e) != 3:
            raise GraphParseError("expected [src, dst, [labels]]", line, name)
        src, dst, lab = e
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (src, dst)):
            raise GraphParseError("src/dst must be integers", line, name)
        pairs.append((src, dst))
        labels.append(_int_tuple(lab, line, name))
    if len({len(v) for v in labels}) > 1:
        raise GraphParseError("edge label tuples differ in length", line, "edges")

    target = record["target"]
    if isinstance(target, bool) or not isinstance(target, (int, float)):
        raise GraphParseError("target must be a number", line, "target")
    target = float(target)
    if not math.isfinite(target):
        raise GraphParseError("target is not finite", line, "target")
    if task == "classification" and target not in (0.0, 1.0):
        raise GraphParseError("classification target must be 0 or 1", line, "target")

    directed = record.get("directed", False)
    if not isinstance(directed, bool):
        raise GraphParseError("expected true or false", line, "directed")
    width = len(labels[0]) if labels else int(record.get("edge_fields", 1))
    try:
        graph = make_graph(
            node_labels,
            np.array(pairs, dtype=np.int64).reshape(-1, 2),
            np.array(labels, dtype=np.int64).reshape(len(pairs), width),
            directed=directed,
            allow_self_loops=allow_self_loops,
        )
    except GraphParseError as exc:
        raise GraphParseError(str(exc), line) from None
    return LabeledExample(graph, target)


def serialize_record(example: LabeledExample) -> str:
    """Inverse of :func:`parse_graph_record`; undirected edges are written once."""
    g = example.graph
    edges = []
    for (s, d), lab in zip(g.edges.tolist(), g.edge_labels.tolist()):
        if g.directed or s <= d:
            edges.append([s, d, lab])
    record = {"nodes": g.node_labels.tolist(), "edges": edges, "target": example.target}
    if g.directed:
        record["directed"] = True
    if not edges:
        record["edge_fields"] = g.edge_labels.shape[1]
    return json.dumps(record, separators=(",", ":"))


def load_jsonl(path: str | Path, task: str | None = None) -> list[LabeledExample]:
    out = []
    with open(path) as fh:
        for lineno, text in enumerate(fh, start=1):
            if text.strip():
                out.append(parse_graph_record(text, lineno, task))
    if not out:
        raise GraphParseError(f"{path} holds no examples")
    return out


def write_jsonl(examples: Iterable[LabeledExample], path: str | Path) -> None:
    with open(path, "w") as fh:
        for ex in examples:
            fh.write(serialize_record(ex) + "\n")


# --- splits -----------------------------------------------------------------

def split_dataset(store: Sequence | int, fractions: Sequence[float] = (0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    """Shuffle indices with ``seed`` and cut them into train/valid/test slices."""
    n = store if isinstance(store, int) else len(store)
    if n < 3:
        raise ValueError(f"need at least 3 examples to split, got {n}")
    if len(fractions) != 3 or any(f <= 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    perm = np.random.default_rng(seed).permutation(n).tolist()
    n_train = int(round(fractions[0] * n))
    n_valid = int(round(fractions[1] * n))
    return DatasetSplit(
        tuple(perm[:n_train]),
        tuple(perm[n_train:n_train + n_valid]),
        tuple(perm[n_train + n_valid:]),
    )


def read_split_files(directory: str | Path, store_size: int | None = None) -> DatasetSplit:
    directory = Path(directory)
    parts = []
    for name in SPLIT_NAMES:
        path = directory / f"{name}.idx"
        parts.append(tuple(int(t) for t in path.read_text().split()))
    split = DatasetSplit(*parts)
    every = [i for p in parts for i in p]
    if len(set(every)) != len(every):
        raise ValueError(f"split files in {directory} overlap")
    if store_size is not None and any(not 0 <= i < store_size for i in every):
        raise ValueError(f"split files in {directory} reference examples outside the store")
    return split


def write_split_files(split: DatasetSplit, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLIT_NAMES:
        (directory / f"{name}.idx").write_text("".join(f"{i}\n" for i in split.indices(name)))


# --- synthetic tasks --------------------------------------------------------

def count_triangles(graph: Graph) -> int:
    adj = graph.adjacency()
    return sum(
        1
        for i, j, k in itertools.combinations(range(graph.num_nodes), 3)
        if adj[i, j] and adj[j, k] and adj[i, k]
    )


def max_degree_parity(graph: Graph) -> int:
    deg = np.bincount(graph.edges[:, 0], minlength=graph.num_nodes) if graph.num_edges else np.zeros(1, int)
    return int(deg.max()) % 2


def generate_synthetic(task: str, count: int, node_range: tuple[int, int] = (5, 12), seed: int = 0,
                       edge_prob: tuple[float, float] = (0.2, 0.5)) -> list[LabeledExample]:
    """Random graphs with one categorical node/edge label (always 0).

    Each graph draws ``N`` uniformly from ``node_range`` and an edge
    probability uniformly from ``edge_prob``, then includes every node pair
    independently.
    """
    if task not in TASKS:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(TASKS)}")
    lo, hi = node_range
    if count < 1 or not 1 <= lo <= hi <= 20:
        raise ValueError("need count >= 1 and 1 <= min <= max <= 20")
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        n = int(rng.integers(lo, hi + 1))
        p = float(rng.uniform(*edge_prob))
        iu, ju = np.triu_indices(n, k=1)
        keep = rng.random(len(iu)) < p
        pairs = np.stack([iu[keep], ju[keep]], axis=1)
        graph = make_graph(np.zeros((n, 1)), pairs, np.zeros((len(pairs), 1)))
        target = count_triangles(graph) if task == "triangle-count" else max_degree_parity(graph)
        out.append(LabeledExample(graph, float(target)))
    return out


# --- batching ---------------------------------------------------------------

@dataclass
class GraphBatch:
    """Disjoint union of several graphs with bookkeeping to undo it."""

    node_labels: np.ndarray
    edge_labels: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    node_graph: np.ndarray
    sizes: np.ndarray
    targets: np.ndarray
    example_ids: list[int] = field(default_factory=list)

    @property
    def num_graphs(self) -> int:
        return len(self.sizes)

    @property
    def num_nodes(self) -> int:
        return int(self.node_labels.shape[0])

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.sizes)[:-1]]).astype(np.int64)


def collate(examples: Sequence[LabeledExample], example_ids: Sequence[int] | None = None) -> GraphBatch:
    if not examples:
        raise ValueError("cannot batch zero graphs")
    sizes = np.array([ex.graph.num_nodes for ex in examples], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    edges = [ex.graph.edges + off for ex, off in zip(examples, offsets)]
    return GraphBatch(
        node_labels=np.concatenate([ex.graph.node_labels for ex in examples]),
        edge_labels=np.concatenate([ex.graph.edge_labels for ex in examples]),
        src=np.concatenate([e[:, 0] for e in edges]).astype(np.int64),
        dst=np.concatenate([e[:, 1] for e in edges]).astype(np.int64),
        node_graph=np.repeat(np.arange(len(examples), dtype=np.int64), sizes),
        sizes=sizes,
        targets=np.array([ex.target for ex in examples], dtype=np.float64),
        example_ids=list(example_ids) if example_ids is not None else list(range(len(examples))),
    )
