"""Graph data model, benchmark-format parsing, and edge-density splitting.

Datasets arrive in the common graph-benchmark text layout (one ``_A.txt``
edge file, a ``_graph_indicator.txt`` node-to-graph map, plus graph and
node label files). Parsing produces immutable :class:`Graph` records with
0-indexed contiguous node ids; directed duplicate edges in the files are
merged into single undirected edges.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .errors import ConfigurationError, ContractViolation, DatasetFormatError, IngestionError

SOURCE = "source"
TARGET = "target"


@dataclass(frozen=True)
class Graph:
    """An undirected simple graph with categorical node labels.

    ``edges`` holds each undirected edge once as an ``(u, v)`` pair of
    0-indexed node ids. ``graph_label`` is ``None`` for graphs whose class
    is hidden (target-domain training data).
    """

    node_count: int
    edges: tuple[tuple[int, int], ...]
    node_labels: tuple[int, ...]
    graph_label: int | None = None

    def __post_init__(self):
        if self.node_count < 0:
            raise ContractViolation(f"negative node_count {self.node_count}")
        if len(self.node_labels) != self.node_count:
            raise ContractViolation(
                f"node_labels length {len(self.node_labels)} != node_count {self.node_count}"
            )
        seen = set()
        for u, v in self.edges:
            if u == v:
                raise ContractViolation(f"self-loop at node {u}")
            if not (0 <= u < self.node_count and 0 <= v < self.node_count):
                raise ContractViolation(f"edge ({u}, {v}) outside node range [0, {self.node_count})")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                raise ContractViolation(f"duplicate undirected edge ({u}, {v})")
            seen.add(key)

    def neighbors(self) -> list[list[int]]:
        """Adjacency lists, one per node."""
        adj: list[list[int]] = [[] for _ in range(self.node_count)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return adj


@dataclass(frozen=True)
class DomainDataset:
    """An ordered collection of graphs tagged as one adaptation domain.

    Source datasets keep ``graph_label`` on every graph. Target datasets
    carry ``None`` labels on the graphs themselves; the true labels are
    detached into ``eval_labels`` and consumed only by evaluation code.
    """

    graphs: tuple[Graph, ...]
    domain: str
    num_classes: int
    label_alphabet_size: int
    eval_labels: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.domain not in (SOURCE, TARGET):
            raise ContractViolation(f"domain must be {SOURCE!r} or {TARGET!r}, got {self.domain!r}")
        if self.domain == SOURCE:
            for i, g in enumerate(self.graphs):
                if g.graph_label is None:
                    raise ContractViolation(f"source graph {i} has no label")
        else:
            for i, g in enumerate(self.graphs):
                if g.graph_label is not None:
                    raise ContractViolation(
                        f"target graph {i} carries a label; detach labels via subset_as_target"
                    )
            if self.eval_labels is not None and len(self.eval_labels) != len(self.graphs):
                raise ContractViolation("eval_labels length does not match graph count")

    def __len__(self) -> int:
        return len(self.graphs)


@dataclass(frozen=True)
class DensityPartition:
    """Four disjoint index groups covering a dataset, ordered by density."""

    groups: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...], tuple[int, ...]]
    boundaries: tuple[float, float, float]


def edge_density(g: Graph) -> float:
    """Fraction of possible undirected edges present; 0.0 when |V| <= 1."""
    n = g.node_count
    if n <= 1:
        return 0.0
    return 2.0 * len(g.edges) / (n * (n - 1))


def split_by_density(ds: DomainDataset) -> DensityPartition:
    """Split a dataset into four density quartiles.

    Graphs are sorted by ``(edge_density, original index)`` ascending and
    chunked into four contiguous groups whose sizes differ by at most one;
    group 0 holds the sparsest graphs. The split is deterministic.
    """
    n = len(ds.graphs)
    if n < 4:
        raise ConfigurationError(f"need at least 4 graphs to build a density partition, got {n}")
    densities = [edge_density(g) for g in ds.graphs]
    order = sorted(range(n), key=lambda i: (densities[i], i))
    base, rem = divmod(n, 4)
    groups: list[tuple[int, ...]] = []
    start = 0
    for k in range(4):
        size = base + (1 if k < rem else 0)
        groups.append(tuple(order[start:start + size]))
        start += size
    boundaries = tuple(max(densities[i] for i in grp) for grp in groups[:3])
    return DensityPartition(groups=(groups[0], groups[1], groups[2], groups[3]),
                            boundaries=boundaries)  # type: ignore[arg-type]


def subset_as_source(ds: DomainDataset, indices) -> DomainDataset:
    """Build a labeled source-domain dataset from a subset of ``ds``."""
    graphs = tuple(ds.graphs[i] for i in indices)
    for i, g in zip(indices, graphs):
        if g.graph_label is None:
            raise ConfigurationError(f"graph {i} is unlabeled and cannot join a source dataset")
    return DomainDataset(graphs=graphs, domain=SOURCE, num_classes=ds.num_classes,
                         label_alphabet_size=ds.label_alphabet_size)


def subset_as_target(ds: DomainDataset, indices) -> DomainDataset:
    """Build a target-domain dataset from a subset of ``ds``.

    Graph labels are stripped from the graphs and kept aside in
    ``eval_labels`` so they can never reach training code.
    """
    picked = [ds.graphs[i] for i in indices]
    labels = []
    for i, g in zip(indices, picked):
        if g.graph_label is None:
            raise ConfigurationError(f"graph {i} has no label to hold out for evaluation")
        labels.append(g.graph_label)
    graphs = tuple(replace(g, graph_label=None) for g in picked)
    return DomainDataset(graphs=graphs, domain=TARGET, num_classes=ds.num_classes,
                         label_alphabet_size=ds.label_alphabet_size,
                         eval_labels=tuple(labels))


def _dataset_files(root_path, dataset_name: str) -> dict[str, Path]:
    base = Path(root_path) / dataset_name
    return {
        "A": base / f"{dataset_name}_A.txt",
        "graph_indicator": base / f"{dataset_name}_graph_indicator.txt",
        "graph_labels": base / f"{dataset_name}_graph_labels.txt",
        "node_labels": base / f"{dataset_name}_node_labels.txt",
    }


def _read_int_lines(path: Path) -> list[int]:
    values = []
    with path.open("r", newline=None) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            try:
                values.append(int(text))
            except ValueError:
                raise DatasetFormatError(f"{path.name}: expected an integer, got {text!r}", lineno)
    return values


def parse_tudataset(root_path, dataset_name: str) -> DomainDataset:
    """Parse a benchmark-format dataset directory into a DomainDataset.

    Expects ``<root>/<name>/<name>_A.txt`` and its sibling indicator and
    label files, with 1-indexed node ids and comma-separated edge pairs.
    Node ids are renumbered per graph starting at 0; the two directed
    copies of each undirected edge are merged. Graph labels are remapped
    onto ``[0, C)`` and node labels onto ``[0, d)``, both preserving the
    sorted order of the raw values.
    """
    files = _dataset_files(root_path, dataset_name)
    for name, path in files.items():
        if not path.is_file():
            raise IngestionError(f"missing dataset file: {path}")

    indicator = _read_int_lines(files["graph_indicator"])
    if not indicator:
        raise DatasetFormatError(f"{files['graph_indicator'].name}: no nodes listed")
    raw_node_labels = _read_int_lines(files["node_labels"])
    if len(raw_node_labels) != len(indicator):
        raise DatasetFormatError(
            f"{files['node_labels'].name}: {len(raw_node_labels)} node labels for "
            f"{len(indicator)} indicator entries"
        )
    raw_graph_labels = _read_int_lines(files["graph_labels"])
    num_graphs = max(indicator)
    if len(raw_graph_labels) != num_graphs:
        raise DatasetFormatError(
            f"{files['graph_labels'].name}: {len(raw_graph_labels)} labels for {num_graphs} graphs"
        )

    # Global 1-indexed node id -> (graph index, local 0-indexed id).
    graph_of: list[int] = []
    local_of: list[int] = []
    counts = [0] * num_graphs
    for gid in indicator:
        if not (1 <= gid <= num_graphs):
            raise DatasetFormatError(f"graph indicator {gid} out of range")
        g = gid - 1
        graph_of.append(g)
        local_of.append(counts[g])
        counts[g] += 1

    edge_sets: list[set[tuple[int, int]]] = [set() for _ in range(num_graphs)]
    with files["A"].open("r", newline=None) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text:
                continue
            parts = text.split(",")
            if len(parts) != 2:
                raise DatasetFormatError(f"{files['A'].name}: expected 'u, v', got {text!r}", lineno)
            try:
                u, v = int(parts[0].strip()), int(parts[1].strip())
            except ValueError:
                raise DatasetFormatError(f"{files['A'].name}: non-integer endpoint in {text!r}", lineno)
            if not (1 <= u <= len(indicator)) or not (1 <= v <= len(indicator)):
                raise DatasetFormatError(
                    f"{files['A'].name}: edge ({u}, {v}) references a node outside 1..{len(indicator)}",
                    lineno,
                )
            if graph_of[u - 1] != graph_of[v - 1]:
                raise DatasetFormatError(
                    f"{files['A'].name}: edge ({u}, {v}) crosses graphs "
                    f"{graph_of[u - 1] + 1} and {graph_of[v - 1] + 1}",
                    lineno,
                )
            if u == v:
                raise DatasetFormatError(f"{files['A'].name}: self-loop at node {u}", lineno)
            g = graph_of[u - 1]
            a, b = local_of[u - 1], local_of[v - 1]
            edge_sets[g].add((a, b) if a < b else (b, a))

    graph_label_map = {raw: i for i, raw in enumerate(sorted(set(raw_graph_labels)))}
    node_label_map = {raw: i for i, raw in enumerate(sorted(set(raw_node_labels)))}

    node_labels_per_graph: list[list[int]] = [[] for _ in range(num_graphs)]
    for raw_label, g in zip(raw_node_labels, graph_of):
        node_labels_per_graph[g].append(node_label_map[raw_label])

    graphs = tuple(
        Graph(
            node_count=counts[g],
            edges=tuple(sorted(edge_sets[g])),
            node_labels=tuple(node_labels_per_graph[g]),
            graph_label=graph_label_map[raw_graph_labels[g]],
        )
        for g in range(num_graphs)
    )
    return DomainDataset(
        graphs=graphs,
        domain=SOURCE,
        num_classes=len(graph_label_map),
        label_alphabet_size=len(node_label_map),
    )


def write_tudataset(ds: DomainDataset, root_path, dataset_name: str) -> Path:
    """Serialize a dataset back to the benchmark text layout.

    Each undirected edge is written in both directions, matching the way
    published benchmark files list edges. Re-parsing the written files
    yields a dataset identical to ``ds``.
    """
    base = Path(root_path) / dataset_name
    base.mkdir(parents=True, exist_ok=True)
    files = _dataset_files(root_path, dataset_name)

    offsets = []
    total = 0
    for g in ds.graphs:
        offsets.append(total)
        total += g.node_count

    with files["graph_indicator"].open("w") as fh:
        for gid, g in enumerate(ds.graphs, start=1):
            for _ in range(g.node_count):
                fh.write(f"{gid}\n")
    with files["node_labels"].open("w") as fh:
        for g in ds.graphs:
            for label in g.node_labels:
                fh.write(f"{label}\n")
    with files["graph_labels"].open("w") as fh:
        for i, g in enumerate(ds.graphs):
            label = g.graph_label
            if label is None:
                if ds.eval_labels is None:
                    raise ConfigurationError(f"graph {i} has no label to serialize")
                label = ds.eval_labels[i]
            fh.write(f"{label}\n")
    with files["A"].open("w") as fh:
        for off, g in zip(offsets, ds.graphs):
            directed = sorted([(u, v) for u, v in g.edges] + [(v, u) for u, v in g.edges])
            for u, v in directed:
                fh.write(f"{off + u + 1}, {off + v + 1}\n")
    return base
