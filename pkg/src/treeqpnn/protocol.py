"""Tree geometry, delay-line arithmetic, switch sizing and the timestep-by-timestep generation schedule.

Rows of a tree with branching vector ``b = [b_0, ..., b_{d-1}]`` are numbered ``j = 0`` (root) to ``j = d`` (leaves);
row ``j`` holds ``P_j = prod_{k<j} b_k`` photons labelled ``(j, r)``. The parent of ``(j, r)`` is
``(j - 1, r // b_{j-1})``. Times are integer multiples of the source period ``dt_s``.

The single-source protocol builds the tree bottom-up. Stage ``j`` starts at ``(d - j) P_d`` and emits one row-``j``
photon every ``I_j = prod_{k>=j} b_k`` steps. Each photon meets its already-delayed children in the QPNN, is
entangled with them, and is then routed to delay line ``i = r mod b_{j-1} + 1``, whose delay brings it back exactly
when its parent is emitted. The root goes straight to the output.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .mesh import HardwareModel, SPEED_OF_LIGHT

Label = tuple[int, int]

EMIT = "EMIT"
QPNN_OP = "QPNN_OP"
ROUTE = "ROUTE"
DELAY_OCCUPY = "DELAY_OCCUPY"
SWITCH_UPDATE = "SWITCH_UPDATE"
IDLE = "IDLE"


@dataclass(frozen=True)
class TreeShape:
    """A tree-type cluster state described by its branching vector."""

    b: tuple[int, ...]

    def __post_init__(self) -> None:
        b = tuple(int(x) for x in self.b)
        if not b:
            raise ValueError("the branching vector must not be empty")
        if any(x < 1 for x in b):
            raise ValueError(f"branchings must be at least 1, got {list(b)}")
        object.__setattr__(self, "b", b)

    @classmethod
    def parse(cls, text: str) -> "TreeShape":
        return cls(tuple(int(x) for x in text.replace(" ", "").split(",") if x))

    @property
    def depth(self) -> int:
        return len(self.b)

    def row_size(self, j: int) -> int:
        return math.prod(self.b[:j])

    def row_sizes(self) -> list[int]:
        return [self.row_size(j) for j in range(self.depth + 1)]

    def interval(self, j: int) -> int:
        """Spacing between consecutive row-``j`` emissions, ``prod_{k>=j} b_k`` (1 for the leaves)."""
        return math.prod(self.b[j:])

    def parent(self, label: Label) -> Optional[Label]:
        j, r = label
        return None if j == 0 else (j - 1, r // self.b[j - 1])

    def children(self, label: Label) -> list[Label]:
        j, r = label
        if j >= self.depth:
            return []
        return [(j + 1, r * self.b[j] + c) for c in range(self.b[j])]

    def labels(self) -> list[Label]:
        return [(j, r) for j in range(self.depth + 1) for r in range(self.row_size(j))]

    def edges(self) -> set[tuple[Label, Label]]:
        return {(self.parent(lab), lab) for lab in self.labels() if lab[0] > 0}

    def __str__(self) -> str:
        return "[" + ",".join(map(str, self.b)) + "]"


def _shape(b) -> TreeShape:
    return b if isinstance(b, TreeShape) else TreeShape(tuple(b))


def photon_count(b) -> int:
    """Total photons ``1 + sum_j prod_{k<=j} b_k``."""
    shape = _shape(b)
    return sum(shape.row_sizes())


def total_time(b, dt_s: float = 1.0) -> float:
    """Duration ``d prod(b) dt_s`` of the single-source protocol."""
    shape = _shape(b)
    return shape.depth * shape.row_size(shape.depth) * dt_s


def delay_steps(b, i: int, j: int) -> int:
    """Length in source periods of delay line ``i`` used after row ``j``: ``prod(b) - (i-1) prod_{k>=j} b_k``."""
    shape = _shape(b)
    if not 1 <= j <= shape.depth:
        raise ValueError(f"row index j={j} outside 1..{shape.depth}")
    if not 1 <= i <= shape.b[j - 1]:
        raise ValueError(f"line index i={i} outside 1..{shape.b[j - 1]} for row {j}")
    return shape.row_size(shape.depth) - (i - 1) * shape.interval(j)


def delay_time(b, i: int, j: int, dt_s: float) -> float:
    return delay_steps(b, i, j) * dt_s


def delay_length(seconds: float, hardware: Optional[HardwareModel] = None,
                 group_index: float = 1.462, fiber_loss_db_per_km: float = 0.17) -> tuple[float, float]:
    """Fiber length in meters and its loss in dB for a delay of ``seconds``."""
    if hardware is not None:
        group_index, fiber_loss_db_per_km = hardware.group_index, hardware.fiber_loss_db_per_km
    meters = seconds * SPEED_OF_LIGHT / group_index
    return meters, meters / 1000 * fiber_loss_db_per_km


class NetworkSize(NamedTuple):
    modes: int
    layers: int
    extrapolated: bool


def required_network_size(b) -> NetworkSize:
    """QPNN size able to perform every unit-cell operation of the tree.

    Layer counts are empirical: two layers suffice for branchings up to 2 and three for branchings of 3 or 4.
    Other branchings reuse the nearest known count and are flagged as extrapolated.
    """
    top = max(_shape(b).b)
    modes = 2 * (top + 1)
    if top == 2:
        return NetworkSize(modes, 2, False)
    if top in (3, 4):
        return NetworkSize(modes, 3, False)
    return NetworkSize(modes, 2 if top < 2 else 3, True)


def switch_stages(ports: int) -> int:
    """Stages of a binary MZI switch tree serving ``ports`` outputs, ``ceil(log2(2 ports)) - 1``."""
    return 0 if ports <= 1 else math.ceil(math.log2(2 * ports)) - 1


@dataclass(frozen=True)
class DelayLine:
    line: int
    row: int
    index: int
    steps: int
    seconds: float
    meters: float
    loss_db: float


@dataclass(frozen=True)
class GeneratorLayout:
    """Delay lines and switches of the generator.

    ``lines`` lists one entry per (row, line index) setting. In dynamic mode the physical line ``i`` is re-set for
    every row, in static mode every setting is its own physical line.
    """

    b: tuple[int, ...]
    dt_s: float
    delay_mode: str
    n_lines: int
    lines: tuple[DelayLine, ...]
    output_switch_ports: int
    output_switch_stages: int
    input_switch_ports_methods: Optional[tuple[int, int]]
    input_switch_ports_alt: Optional[tuple[int, int]]
    input_switch_stages: int

    def line_for(self, row: int, index: int) -> DelayLine:
        for line in self.lines:
            if line.row == row and line.index == index:
                return line
        raise KeyError((row, index))

    def summary(self) -> dict:
        return {
            "b": list(self.b),
            "dt_s": self.dt_s,
            "delay_mode": self.delay_mode,
            "n_lines": self.n_lines,
            "output_switch": f"1x{self.output_switch_ports}",
            "output_switch_stages": self.output_switch_stages,
            "input_switch_methods": None if self.input_switch_ports_methods is None else
            "x".join(map(str, self.input_switch_ports_methods)),
            "input_switch_alt": None if self.input_switch_ports_alt is None else
            "x".join(map(str, self.input_switch_ports_alt)),
            "input_switch_stages": self.input_switch_stages,
        }


def layout(b, dt_s: float, delay_mode: str = "dynamic", hardware: Optional[HardwareModel] = None,
           sources: int = 1) -> GeneratorLayout:
    """Delay-line lengths and switch sizes for generating tree ``b``.

    Args:
        b: branching vector
        dt_s: source period in seconds
        delay_mode: ``"dynamic"`` (``max(b)`` reconfigurable lines) or ``"static"`` (``sum(b)`` fixed lines)
        hardware: supplies the fiber group index and loss
        sources: 3 when whole bottom unit cells are emitted at once, which removes the leaf-row delay stage

    Returns:
        The layout
    """
    shape = _shape(b)
    if delay_mode not in ("dynamic", "static"):
        raise ValueError(f"delay_mode must be 'dynamic' or 'static', got {delay_mode!r}")
    delayed = _delay_shape(shape, sources)
    rows = range(delayed.depth, 0, -1) if delayed else range(0)
    n_lines = (max(shape.b) if delay_mode == "dynamic" else sum(shape.b))
    lines, next_id = [], 1
    for j in rows:
        for i in range(1, delayed.b[j - 1] + 1):
            steps = delay_steps(delayed, i, j)
            meters, db = delay_length(steps * dt_s, hardware)
            line_id = i if delay_mode == "dynamic" else next_id
            next_id += 1
            lines.append(DelayLine(line_id, j, i, steps, steps * dt_s, meters, db))
    out_ports = n_lines + 1
    static = delay_mode == "static"
    return GeneratorLayout(
        b=shape.b,
        dt_s=dt_s,
        delay_mode=delay_mode,
        n_lines=n_lines,
        lines=tuple(lines),
        output_switch_ports=out_ports,
        output_switch_stages=switch_stages(out_ports),
        input_switch_ports_methods=(1, n_lines - 1) if static else None,
        input_switch_ports_alt=(n_lines - 1, max(shape.b) - 1) if static else None,
        input_switch_stages=switch_stages(n_lines - 1) if static else 0,
    )


@dataclass(frozen=True)
class Event:
    t: int
    kind: str
    photons: tuple[Label, ...] = ()
    source: Optional[int] = None
    op: Optional[str] = None
    line: Optional[int] = None
    duration: Optional[int] = None

    @property
    def route(self) -> str:
        if self.kind == ROUTE:
            return "output" if self.line is None else f"line {self.line}"
        if self.kind == DELAY_OCCUPY:
            return f"line {self.line}"
        return ""


@dataclass
class PhotonPath:
    """What one photon passes through on its way from the source to the generator output."""

    label: Label
    emitted: int = -1
    qpnn_passes: int = 0
    delay_traversals: int = 0
    output_switch_crossings: int = 0
    input_switch_crossings: int = 0
    delay_steps: int = 0
    fiber_meters: float = 0.0
    fiber_db: float = 0.0
    lines: list = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class Schedule:
    b: tuple[int, ...]
    dt_s: float
    sources: int
    delay_mode: str
    span: int
    events: tuple[Event, ...]
    paths: dict
    layout: GeneratorLayout

    @property
    def shape(self) -> TreeShape:
        return TreeShape(self.b)

    @property
    def total_time(self) -> float:
        return self.span * self.dt_s

    def at(self, t: int) -> list[Event]:
        return [e for e in self.events if e.t == t]

    def of_kind(self, kind: str) -> list[Event]:
        return [e for e in self.events if e.kind == kind]

    def emission_times(self) -> dict:
        return {e.photons[0]: e.t for e in self.of_kind(EMIT)}

    def entangling_times(self) -> list[int]:
        return sorted({e.t for e in self.of_kind(QPNN_OP) if e.op != "identity"})

    def edges(self) -> set[tuple[Label, Label]]:
        out = set()
        for e in self.of_kind(QPNN_OP):
            out |= {(e.photons[0], child) for child in e.photons[1:]}
        return out

    def emission_table(self) -> list[tuple[int, int, Label, str, Optional[int]]]:
        """``(row, t, photon, destination, delay steps)`` per emitted photon, grouped by row from the leaves up."""
        routes: dict = {}
        for e in self.of_kind(ROUTE):
            routes.setdefault(e.photons[0], e)
        rows = []
        for e in self.of_kind(EMIT):
            label = e.photons[0]
            r = routes[label]
            steps = None if r.line is None else r.duration
            rows.append((label[0], e.t, label, r.route, steps))
        return sorted(rows, key=lambda x: (-x[0], x[1], x[2]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["timestep", "event", "photons", "source", "operation", "route", "duration"])
        for e in self.events:
            writer.writerow([e.t, e.kind, " ".join(f"({j},{r})" for j, r in e.photons),
                             "" if e.source is None else e.source, e.op or "", e.route,
                             "" if e.duration is None else e.duration])
        return buf.getvalue()

    def timetable(self) -> str:
        """Two-row table per tree row: emission timestep over the photon it emits, plus the chosen delay."""
        lines = [f"tree {self.shape}, {self.sources} source(s), span {self.span} dt_s"]
        table = self.emission_table()
        for row in sorted({x[0] for x in table}, reverse=True):
            entries = [x for x in table if x[0] == row]
            cells = [(str(t), f"({lab[0]},{lab[1]})", "out" if steps is None else f"{steps}") for _, t, lab, _, steps in
                     entries]
            width = max(len(c) for cell in cells for c in cell)
            lines.append(f"j={row}")
            lines.append("  t     | " + " ".join(c[0].rjust(width) for c in cells))
            lines.append("  photon| " + " ".join(c[1].rjust(width) for c in cells))
            lines.append("  delay | " + " ".join(c[2].rjust(width) for c in cells))
        return "\n".join(lines) + "\n"


def _delay_shape(shape: TreeShape, sources: int) -> Optional[TreeShape]:
    if sources == 1:
        return shape
    return TreeShape(shape.b[:-1]) if shape.depth > 1 else None


def generate_schedule(b, dt_s: float = 1.0, sources: int = 1, delay_mode: str = "dynamic",
                      hardware: Optional[HardwareModel] = None) -> Schedule:
    """Every emission, QPNN operation, routing decision and delay occupation needed to build tree ``b``.

    With ``sources=3`` (all-2 branching only) the three sources emit a complete bottom unit cell, a row ``d-1``
    parent and its two leaves, in each of the first ``P_{d-1}`` timesteps; the QPNN entangles them at once, the leaves
    leave the generator and the remaining rows follow the single-source protocol of ``b[:-1]``. A single-row tree
    then needs no delays at all and is still charged one timestep.
    """
    shape = _shape(b)
    if sources not in (1, 3):
        raise ValueError("sources must be 1 or 3")
    if sources == 3 and any(x != 2 for x in shape.b):
        raise ValueError("the three-source protocol is defined for all-2 branching vectors only")
    lay = layout(shape, dt_s, delay_mode, hardware, sources)
    delayed = _delay_shape(shape, sources)

    events: list[Event] = []
    paths = {lab: PhotonPath(lab) for lab in shape.labels()}
    static = delay_mode == "static"

    def emit(t: int, label: Label, source: int) -> None:
        events.append(Event(t, EMIT, (label,), source=source))
        paths[label].emitted = t

    def qpnn(t: int, photons: tuple[Label, ...]) -> None:
        op = "identity" if len(photons) == 1 else f"entangle-{len(photons) - 1}"
        events.append(Event(t, QPNN_OP, photons, op=op))
        for lab in photons:
            paths[lab].qpnn_passes += 1
            paths[lab].output_switch_crossings += 1

    def to_output(t: int, label: Label) -> None:
        events.append(Event(t, ROUTE, (label,)))

    if delayed is None:
        # single unit cell emitted at once by three sources
        root = (0, 0)
        cell = (root,) + tuple(shape.children(root))
        for s, lab in enumerate(cell):
            emit(0, lab, s)
        qpnn(0, cell)
        for lab in cell:
            to_output(0, lab)
        span = 1
    else:
        d = delayed.depth
        bottom = delayed.row_size(d)
        span = d * bottom
        for j in range(d, -1, -1):
            start, step = (d - j) * bottom, delayed.interval(j)
            if static and j >= 1:
                events.append(Event(start, SWITCH_UPDATE, op=f"select lines for row {j}"))
            for r in range(delayed.row_size(j)):
                t = start + r * step
                label = (j, r)
                if sources == 3 and j == d:
                    leaves = tuple(shape.children(label))
                    cell = (label,) + leaves
                    for s, lab in enumerate(cell):
                        emit(t, lab, s)
                    qpnn(t, cell)
                    for lab in leaves:
                        to_output(t, lab)
                else:
                    emit(t, label, 0)
                    arrivals = tuple(delayed.children(label))
                    for child in arrivals:
                        p = paths[child]
                        if static and p.lines and p.lines[-1][1] > 1:
                            p.input_switch_crossings += 1
                    qpnn(t, (label,) + arrivals)
                    for child in arrivals:
                        to_output(t, child)
                if j == 0:
                    to_output(t, label)
                    continue
                i = r % delayed.b[j - 1] + 1
                line = lay.line_for(j, i)
                events.append(Event(t, ROUTE, (label,), line=line.line, duration=line.steps))
                events.append(Event(t, DELAY_OCCUPY, (label,), line=line.line, duration=line.steps))
                p = paths[label]
                p.delay_traversals += 1
                p.delay_steps += line.steps
                p.fiber_meters += line.meters
                p.fiber_db += line.loss_db
                p.lines.append((line.line, i, line.steps))

    busy = {e.t for e in events}
    events.extend(Event(t, IDLE) for t in range(span + 1 if delayed is not None else span) if t not in busy)
    order = {SWITCH_UPDATE: 0, EMIT: 1, QPNN_OP: 2, ROUTE: 3, DELAY_OCCUPY: 4, IDLE: 5}
    events.sort(key=lambda e: (e.t, order[e.kind]))
    return Schedule(shape.b, dt_s, sources, delay_mode, span, tuple(events), paths, lay)


def check_schedule(schedule: Schedule) -> list[str]:
    """Structural problems in a schedule; an empty list means every invariant holds.

    Checked: each photon is emitted once; every entangling operation holds a parent and all its children; each
    delayed photon returns exactly when its parent is emitted; at most one photon enters the delay lines per
    timestep and no two photons ever share a position inside one line.
    """
    shape = schedule.shape
    problems = []
    emitted = [e.photons[0] for e in schedule.of_kind(EMIT)]
    if sorted(emitted) != sorted(shape.labels()):
        problems.append("photons are not each emitted exactly once")
    times = schedule.emission_times()
    for e in schedule.of_kind(QPNN_OP):
        head, rest = e.photons[0], e.photons[1:]
        if rest and set(rest) != set(shape.children(head)):
            problems.append(f"operation at t={e.t} does not hold {head} with all its children")
    occupy = schedule.of_kind(DELAY_OCCUPY)
    for e in occupy:
        label = e.photons[0]
        parent = shape.parent(label)
        if parent is None or e.t + e.duration != times[parent]:
            problems.append(f"{label} leaves its delay line at t={e.t + e.duration}, not with its parent")
    entries = [e.t for e in occupy]
    if len(entries) != len(set(entries)):
        problems.append("two photons enter the delay lines in the same timestep")
    by_line: dict = {}
    for e in occupy:
        by_line.setdefault(e.line, []).append(e.t)
    for line, starts in by_line.items():
        if len(starts) != len(set(starts)):
            problems.append(f"two photons share a position in line {line}")
    return problems


def repetition_boost(b) -> float:
    """Ratio of single-source to three-source protocol duration."""
    return generate_schedule(b).span / generate_schedule(b, sources=3).span
