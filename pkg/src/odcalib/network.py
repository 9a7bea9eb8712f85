"""Network description, fixed route choice and the OD-to-segment assignment matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path as FilePath

import networkx as nx
import numpy as np

SPLIT_TOL = 1e-9


class NetworkError(ValueError):
    """Structural problem with a network (unknown ids, bad topology, infeasible spec)."""


@dataclass(frozen=True)
class Segment:
    id: str
    length_km: float
    lanes: int
    speed_limit_kmh: float
    from_node: str | None = None
    to_node: str | None = None


@dataclass(frozen=True)
class Path:
    id: str
    od: str
    segments: tuple[str, ...]
    split: float = 1.0


@dataclass(frozen=True)
class Network:
    segments: tuple[Segment, ...]
    od_pairs: tuple[str, ...]
    paths: tuple[Path, ...]
    measured_paths: tuple[str, ...] = ()
    measured_segments: tuple[str, ...] = ()

    @cached_property
    def segment_index(self) -> dict[str, int]:
        return {s.id: i for i, s in enumerate(self.segments)}

    @cached_property
    def path_index(self) -> dict[str, int]:
        return {p.id: j for j, p in enumerate(self.paths)}

    @cached_property
    def od_index(self) -> dict[str, int]:
        return {z: j for j, z in enumerate(self.od_pairs)}

    @property
    def n_segments(self) -> int:
        return len(self.segments)

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def n_od(self) -> int:
        return len(self.od_pairs)

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([s.length_km for s in self.segments], dtype=float)

    @cached_property
    def lanes(self) -> np.ndarray:
        return np.array([s.lanes for s in self.segments], dtype=float)

    @cached_property
    def speed_limits(self) -> np.ndarray:
        return np.array([s.speed_limit_kmh for s in self.segments], dtype=float)

    @cached_property
    def path_incidence(self) -> np.ndarray:
        """0/1 matrix of shape (paths, segments)."""
        inc = np.zeros((self.n_paths, self.n_segments))
        for j, p in enumerate(self.paths):
            for sid in p.segments:
                try:
                    inc[j, self.segment_index[sid]] = 1.0
                except KeyError:
                    raise NetworkError(f"path {p.id!r} references unknown segment {sid!r}") from None
        return inc

    @cached_property
    def path_od(self) -> np.ndarray:
        return np.array([self.od_index[p.od] for p in self.paths], dtype=int)

    @cached_property
    def path_splits(self) -> np.ndarray:
        return np.array([p.split for p in self.paths], dtype=float)

    @cached_property
    def measured_path_idx(self) -> np.ndarray:
        return np.array([self.path_index[p] for p in self.measured_paths], dtype=int)

    @cached_property
    def measured_segment_idx(self) -> np.ndarray:
        return np.array([self.segment_index[s] for s in self.measured_segments], dtype=int)

    @cached_property
    def assignment(self) -> np.ndarray:
        return build_assignment_matrix(self)

    def free_flow_times(self) -> np.ndarray:
        """Free-flow travel time of every path, in minutes."""
        return 60.0 * self.path_incidence @ (self.lengths / self.speed_limits)

    # -- serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        segs = []
        for s in self.segments:
            rec = {"id": s.id, "length_km": s.length_km, "lanes": s.lanes,
                   "speed_limit_kmh": s.speed_limit_kmh}
            if s.from_node is not None:
                rec["from_node"] = s.from_node
                rec["to_node"] = s.to_node
            segs.append(rec)
        return {
            "segments": segs,
            "od_pairs": list(self.od_pairs),
            "paths": [{"id": p.id, "od": p.od, "segments": list(p.segments), "split": p.split}
                      for p in self.paths],
            "measured_paths": list(self.measured_paths),
            "measured_segments": list(self.measured_segments),
        }

    @classmethod
    def from_dict(cls, data: dict) -> Network:
        try:
            segments = tuple(
                Segment(str(s["id"]), float(s["length_km"]), int(s["lanes"]),
                        float(s["speed_limit_kmh"]),
                        None if s.get("from_node") is None else str(s["from_node"]),
                        None if s.get("to_node") is None else str(s["to_node"]))
                for s in data["segments"]
            )
            paths = tuple(
                Path(str(p["id"]), str(p["od"]), tuple(str(x) for x in p["segments"]),
                     float(p.get("split", 1.0)))
                for p in data["paths"]
            )
            ods = tuple(str(z) for z in data["od_pairs"])
        except KeyError as exc:
            raise NetworkError(f"network document missing field {exc.args[0]!r}") from None
        return cls(
            segments=segments,
            od_pairs=ods,
            paths=paths,
            measured_paths=tuple(str(p) for p in data.get("measured_paths", [p.id for p in paths])),
            measured_segments=tuple(
                str(s) for s in data.get("measured_segments", [s.id for s in segments])),
        )

    def save(self, path) -> None:
        FilePath(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> Network:
        return cls.from_dict(json.loads(FilePath(path).read_text(encoding="utf-8")))


def build_assignment_matrix(network: Network) -> np.ndarray:
    """Dense (segments x OD) matrix; entry (i, z) is the split mass of OD z crossing segment i."""
    A = np.zeros((network.n_segments, network.n_od))
    seg_idx = network.segment_index
    od_idx = network.od_index
    for p in network.paths:
        if p.od not in od_idx:
            raise NetworkError(f"path {p.id!r} references unknown OD {p.od!r}")
        z = od_idx[p.od]
        for sid in p.segments:
            if sid not in seg_idx:
                raise NetworkError(f"path {p.id!r} references unknown segment {sid!r}")
            A[seg_idx[sid], z] += p.split
    return A


def validate_network(network: Network, v_min: float | None = None) -> list[str]:
    """Return a list of human-readable invariant violations; empty means valid."""
    problems: list[str] = []
    if not network.od_pairs:
        problems.append("network has no OD pairs")

    seen: set[str] = set()
    for s in network.segments:
        if s.id in seen:
            problems.append(f"segment {s.id}: duplicate id")
        seen.add(s.id)
        if not s.length_km > 0:
            problems.append(f"segment {s.id}: length must be > 0 (got {s.length_km})")
        if s.lanes < 1:
            problems.append(f"segment {s.id}: lanes must be >= 1 (got {s.lanes})")
        floor = 0.0 if v_min is None else v_min
        if not s.speed_limit_kmh > floor:
            problems.append(f"segment {s.id}: speed limit must exceed {floor} (got {s.speed_limit_kmh})")

    seg_by_id = {s.id: s for s in network.segments}
    od_set = set(network.od_pairs)
    split_sum = {z: 0.0 for z in network.od_pairs}
    path_count = {z: 0 for z in network.od_pairs}
    for p in network.paths:
        if p.od not in od_set:
            problems.append(f"path {p.id}: unknown OD {p.od}")
            continue
        split_sum[p.od] += p.split
        path_count[p.od] += 1
        if not 0.0 <= p.split <= 1.0:
            problems.append(f"path {p.id}: split {p.split} outside [0, 1]")
        if not p.segments:
            problems.append(f"path {p.id}: empty segment list")
        missing = [sid for sid in p.segments if sid not in seg_by_id]
        if missing:
            problems.append(f"path {p.id}: unknown segments {missing}")
            continue
        for a, b in zip(p.segments, p.segments[1:]):
            sa, sb = seg_by_id[a], seg_by_id[b]
            if sa.to_node is not None and sb.from_node is not None and sa.to_node != sb.from_node:
                problems.append(f"path {p.id}: segments {a} -> {b} are not connected")
                break
    for z in network.od_pairs:
        if path_count[z] == 0:
            problems.append(f"OD {z}: no path")
        elif abs(split_sum[z] - 1.0) > 1e-6:
            problems.append(f"OD {z}: path splits sum to {split_sum[z]:.6g}, expected 1")

    path_ids = {p.id for p in network.paths}
    for pid in network.measured_paths:
        if pid not in path_ids:
            problems.append(f"measured path {pid}: not in network")
    for sid in network.measured_segments:
        if sid not in seg_by_id:
            problems.append(f"measured segment {sid}: not in network")
    return problems


# -- synthetic generators ------------------------------------------------------

_LANE_CHOICES = (2, 3)
_SPEED_CHOICES = (80.0, 100.0, 110.0)


def _random_segment_attrs(rng: np.random.Generator) -> tuple[float, int, float]:
    length = float(np.round(rng.uniform(0.5, 1.5), 3))
    lanes = int(rng.choice(_LANE_CHOICES))
    speed = float(rng.choice(_SPEED_CHOICES))
    return length, lanes, speed


def corridor_network(n_segments: int, n_od: int, seed: int, max_tries: int = 2000) -> Network:
    """Linear highway of ``n_segments`` links; each OD is a ramp-to-ramp subchain."""
    if n_segments < 1:
        raise NetworkError("corridor needs at least one segment")
    n_pairs = n_segments * (n_segments + 1) // 2
    if n_od > n_pairs:
        raise NetworkError(f"corridor with {n_segments} segments supports at most {n_pairs} ODs")
    rng = np.random.default_rng(seed)
    segments = []
    for i in range(n_segments):
        length, lanes, speed = _random_segment_attrs(rng)
        segments.append(Segment(f"s{i}", length, lanes, speed, f"n{i}", f"n{i + 1}"))

    all_pairs = [(o, d) for o in range(n_segments) for d in range(o + 1, n_segments + 1)]
    chosen = None
    for _ in range(max_tries):
        pick = rng.choice(len(all_pairs), size=n_od, replace=False)
        pairs = sorted(all_pairs[k] for k in pick)
        covered = np.zeros(n_segments, dtype=bool)
        for o, d in pairs:
            covered[o:d] = True
        chosen = pairs
        if covered.all():
            break
    return _assemble(segments, [[f"s{i}" for i in range(o, d)] for o, d in chosen],
                     [f"n{o}-n{d}" for o, d in chosen])


def grid_network(rows: int, cols: int, n_od: int, seed: int) -> Network:
    """Bidirectional grid; each OD uses its free-flow shortest path."""
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise NetworkError("grid needs at least two nodes")
    n_nodes = rows * cols
    if n_od > n_nodes * (n_nodes - 1):
        raise NetworkError(f"{rows}x{cols} grid supports at most {n_nodes * (n_nodes - 1)} ODs")
    rng = np.random.default_rng(seed)
    g = nx.DiGraph()
    segments = []

    def name(r, c):
        return f"n{r}_{c}"

    for r in range(rows):
        for c in range(cols):
            for dr, dc in ((0, 1), (1, 0)):
                r2, c2 = r + dr, c + dc
                if r2 >= rows or c2 >= cols:
                    continue
                length, lanes, speed = _random_segment_attrs(rng)
                for a, b in ((name(r, c), name(r2, c2)), (name(r2, c2), name(r, c))):
                    sid = f"s{len(segments)}"
                    segments.append(Segment(sid, length, lanes, speed, a, b))
                    g.add_edge(a, b, id=sid, time=length / speed)

    nodes = [name(r, c) for r in range(rows) for c in range(cols)]
    all_pairs = [(a, b) for a in nodes for b in nodes if a != b]
    pick = sorted(rng.choice(len(all_pairs), size=n_od, replace=False))
    routes, labels = [], []
    for k in pick:
        a, b = all_pairs[k]
        node_path = nx.shortest_path(g, a, b, weight="time")
        routes.append([g.edges[u, v]["id"] for u, v in zip(node_path, node_path[1:])])
        labels.append(f"{a}-{b}")
    return _assemble(segments, routes, labels)


def _assemble(segments: list[Segment], routes: list[list[str]], labels: list[str]) -> Network:
    ods = tuple(f"od{j}" for j in range(len(routes)))
    paths = tuple(Path(f"p{j}:{labels[j]}", ods[j], tuple(r), 1.0) for j, r in enumerate(routes))
    return Network(
        segments=tuple(segments),
        od_pairs=ods,
        paths=paths,
        measured_paths=tuple(p.id for p in paths),
        measured_segments=tuple(s.id for s in segments),
    )


def generate_synthetic_network(spec) -> Network:
    """Build the network described by a :class:`~odcalib.scenario.ScenarioSpec`."""
    if spec.topology == "corridor":
        return corridor_network(spec.segments, spec.ods, spec.seed)
    if spec.topology == "grid":
        return grid_network(spec.grid_rows, spec.grid_cols, spec.ods, spec.seed)
    raise NetworkError(f"unknown topology {spec.topology!r}")
