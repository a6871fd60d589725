"""Event-list ingestion, trial alignment and binning, filtering, and file formats.

Raw recordings arrive as (neuron_id, spike_time) event lists.  Alignment
re-indexes spike times relative to per-trial anchors, binning discretizes
them into fixed-width bins clipped to {0, 1}, and the filtering rules keep
the most active trials and sufficiently active neurons.

Formats:
  event CSV   header ``neuron_id,spike_time_s``
  anchor CSV  header ``trial,anchor_time_s,side`` with side in {left, right}
  panel CSV   header ``trial,t,<id_1>,...,<id_d>``; values strictly 0/1;
              a JSON sidecar (<stem>.meta.json) carries bin width, ids and
              applied filters
All floats are written with 9 significant digits.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .netsim import SpikePanel

FLOAT_FMT = "%.9g"

# Bin indices snap to the lower edge within 1e-9 of a bin width, so that
# translating events and anchors together cannot flip a boundary spike.
BOUNDARY_SNAP = 1e-9


@dataclass
class EventList:
    """Spike events sorted by time; ids are free-form strings."""

    neuron_id: np.ndarray
    time_s: np.ndarray

    def __post_init__(self):
        self.neuron_id = np.asarray(self.neuron_id, dtype=object)
        self.time_s = np.asarray(self.time_s, dtype=float)
        if self.neuron_id.shape != self.time_s.shape:
            raise ValueError("neuron_id and time_s must have equal length")
        if self.time_s.size and self.time_s.min() < 0:
            raise ValueError("spike times must be nonnegative")
        order = np.argsort(self.time_s, kind="stable")
        self.neuron_id = self.neuron_id[order]
        self.time_s = self.time_s[order]

    def __len__(self) -> int:
        return self.time_s.size


@dataclass
class TrialWindow:
    """Per-trial analysis windows [anchor - pre, anchor + post) in seconds."""

    anchors: np.ndarray
    pre: float
    post: float
    bin_width: float

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=float)
        if self.pre < 0 or self.post < 0 or self.pre + self.post <= 0:
            raise ValueError("window must have nonnegative pre/post and positive span")
        if self.bin_width <= 0:
            raise ValueError("bin width must be positive")
        ratio = (self.pre + self.post) / self.bin_width
        if abs(ratio - round(ratio)) > 1e-9 * max(ratio, 1.0):
            raise ValueError("window span must be an integer number of bins")

    @property
    def n_bins(self) -> int:
        return int(round((self.pre + self.post) / self.bin_width))

    @property
    def n_trials(self) -> int:
        return self.anchors.size


def bin_events(events: EventList, window: TrialWindow,
               neuron_ids: list[str] | None = None) -> SpikePanel:
    """Bin aligned events into a binary panel, at most one spike per bin.

    Each trial's bin b covers [anchor - pre + b*delta, ... + (b+1)*delta).
    Events landing outside every window are dropped (counted in the panel
    meta), and multiple spikes in one bin clip to 1 (also counted).
    """
    if neuron_ids is None:
        neuron_ids = sorted(set(events.neuron_id.tolist()))
    index = {nid: k for k, nid in enumerate(neuron_ids)}
    d = len(neuron_ids)
    l, n_bins = window.n_trials, window.n_bins

    cols = np.array([index.get(nid, -1) for nid in events.neuron_id], dtype=int)
    known = cols >= 0
    counts = np.zeros((l, n_bins, d), dtype=np.int64)
    placed = np.zeros(len(events), dtype=bool)
    for r, anchor in enumerate(window.anchors):
        rel = (events.time_s - (anchor - window.pre)) / window.bin_width
        idx = np.floor(rel + BOUNDARY_SNAP).astype(int)
        inside = (idx >= 0) & (idx < n_bins) & known
        placed |= inside
        np.add.at(counts, (r, idx[inside], cols[inside]), 1)

    clipped = int((counts[counts > 1] - 1).sum())
    dropped = int((~placed).sum())
    meta = {
        "bin_width_s": window.bin_width,
        "pre_s": window.pre,
        "post_s": window.post,
        "anchors_s": window.anchors.tolist(),
        "dropped_events": dropped,
        "clipped_spikes": clipped,
        "filters": [],
    }
    return SpikePanel(data=np.minimum(counts, 1).astype(np.uint8),
                      bin_width_ms=window.bin_width * 1000.0,
                      neuron_ids=list(neuron_ids), meta=meta)


def filter_trials(panel: SpikePanel, l: int) -> SpikePanel:
    """Keep the l most active trials, after removing trials with no spikes.

    Activity ties break by original trial index; the kept trials stay in
    their original order.
    """
    totals = panel.data.sum(axis=(1, 2))
    nonzero = np.flatnonzero(totals > 0)
    if nonzero.size < l:
        raise ValueError(
            f"need {l} trials with spikes but only {nonzero.size} available "
            f"({panel.n_trials - nonzero.size} empty trials removed)"
        )
    ranked = sorted(nonzero, key=lambda r: (-totals[r], r))
    kept = sorted(ranked[:l])
    meta = dict(panel.meta)
    meta["filters"] = list(meta.get("filters", [])) + [
        {"kept_trials": [int(r) for r in kept], "rule": f"top {l} by spike count"}
    ]
    return SpikePanel(data=panel.data[kept], bin_width_ms=panel.bin_width_ms,
                      neuron_ids=list(panel.neuron_ids), meta=meta)


def filter_neurons(panel: SpikePanel,
                   min_mean_spikes: float = 10.0) -> tuple[SpikePanel, list[str]]:
    """Keep neurons averaging at least ``min_mean_spikes`` per trial.

    Returns the reduced panel and the excluded ids (kept for rendering
    excluded nodes in network plots).
    """
    if panel.n_trials == 0 or panel.n_neurons == 0:
        raise ValueError("cannot filter an empty panel")
    mean_spikes = panel.data.sum(axis=(0, 1)) / panel.n_trials
    keep = mean_spikes >= min_mean_spikes
    if not keep.any():
        raise ValueError(f"no neuron reaches {min_mean_spikes} mean spikes per trial")
    excluded = [nid for nid, k in zip(panel.neuron_ids, keep) if not k]
    meta = dict(panel.meta)
    meta["filters"] = list(meta.get("filters", [])) + [
        {"excluded_neurons": excluded, "rule": f"mean spikes per trial >= {min_mean_spikes}"}
    ]
    kept_ids = [nid for nid, k in zip(panel.neuron_ids, keep) if k]
    return (SpikePanel(data=panel.data[:, :, keep], bin_width_ms=panel.bin_width_ms,
                       neuron_ids=kept_ids, meta=meta), excluded)


# ---------------------------------------------------------------------------
# readers / writers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(obj: dict, path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def read_event_csv(path) -> EventList:
    """Read an event CSV with header ``neuron_id,spike_time_s``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: line 1: empty file") from None
        if header != ["neuron_id", "spike_time_s"]:
            raise ValueError(
                f"{path}: line 1: expected header 'neuron_id,spike_time_s', got {','.join(header)!r}"
            )
        ids, times = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
            try:
                t = float(row[1])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: bad spike time {row[1]!r}") from None
            if t < 0:
                raise ValueError(f"{path}: line {lineno}: negative spike time {t}")
            ids.append(row[0])
            times.append(t)
    return EventList(neuron_id=np.array(ids, dtype=object), time_s=np.array(times))


@dataclass
class AnchorTable:
    """Per-trial alignment anchors with a left/right label."""

    trial: np.ndarray
    time_s: np.ndarray
    side: np.ndarray

    def anchors_for(self, side: str) -> np.ndarray:
        """Anchor times for one side, ordered by trial number."""
        mask = self.side == side
        order = np.argsort(self.trial[mask], kind="stable")
        return self.time_s[mask][order]


def read_anchor_csv(path) -> AnchorTable:
    """Read an anchor CSV with header ``trial,anchor_time_s,side``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: line 1: empty file") from None
        if header != ["trial", "anchor_time_s", "side"]:
            raise ValueError(
                f"{path}: line 1: expected header 'trial,anchor_time_s,side', got {','.join(header)!r}"
            )
        trials, times, sides = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}: line {lineno}: expected 3 fields, got {len(row)}")
            try:
                trials.append(int(row[0]))
                times.append(float(row[1]))
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: bad trial or anchor time") from None
            if row[2] not in ("left", "right"):
                raise ValueError(f"{path}: line {lineno}: side must be left or right, got {row[2]!r}")
            sides.append(row[2])
    return AnchorTable(trial=np.array(trials, dtype=int),
                       time_s=np.array(times, dtype=float),
                       side=np.array(sides, dtype=object))


def _sidecar_path(path) -> Path:
    return Path(path).with_suffix(".meta.json")


def write_panel_csv(panel: SpikePanel, path) -> None:
    """Write panel CSV plus its JSON metadata sidecar."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["trial", "t"] + list(panel.neuron_ids))
        for r in range(panel.n_trials):
            for t in range(panel.n_bins):
                writer.writerow([r + 1, t + 1] + panel.data[r, t].tolist())
    write_json({"bin_width_ms": panel.bin_width_ms,
                "neuron_ids": list(panel.neuron_ids),
                "meta": panel.meta}, _sidecar_path(path))


def read_panel_csv(path) -> SpikePanel:
    """Read a panel CSV; values must be exactly 0 or 1."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: line 1: empty file") from None
        if len(header) < 3 or header[:2] != ["trial", "t"]:
            raise ValueError(
                f"{path}: line 1: expected header 'trial,t,<neuron ids>', got {','.join(header)!r}"
            )
        neuron_ids = header[2:]
        rows_by_trial: dict[int, list[list[int]]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                trial, t = int(row[0]), int(row[1])
            except ValueError:
                raise ValueError(f"{path}: line {lineno}: bad trial/t index") from None
            values = []
            for v in row[2:]:
                if v not in ("0", "1"):
                    raise ValueError(f"{path}: line {lineno}: cell value must be 0 or 1, got {v!r}")
                values.append(int(v))
            bins = rows_by_trial.setdefault(trial, [])
            if t != len(bins) + 1:
                raise ValueError(f"{path}: line {lineno}: expected t={len(bins) + 1} for trial {trial}")
            bins.append(values)
    if not rows_by_trial:
        raise ValueError(f"{path}: no data rows")
    trials = sorted(rows_by_trial)
    if trials != list(range(1, len(trials) + 1)):
        raise ValueError(f"{path}: trial numbers must be contiguous from 1")
    lengths = {len(rows_by_trial[r]) for r in trials}
    if len(lengths) != 1:
        raise ValueError(f"{path}: trials have unequal bin counts {sorted(lengths)}")
    data = np.array([rows_by_trial[r] for r in trials], dtype=np.uint8)

    bin_width_ms, meta = 1.0, {}
    sidecar = _sidecar_path(path)
    if sidecar.exists():
        side = json.loads(sidecar.read_text())
        bin_width_ms = float(side.get("bin_width_ms", 1.0))
        meta = side.get("meta", {})
    return SpikePanel(data=data, bin_width_ms=bin_width_ms,
                      neuron_ids=neuron_ids, meta=meta)


def write_matrix_csv(mat: np.ndarray, path) -> None:
    np.savetxt(path, np.atleast_2d(np.asarray(mat, dtype=float)),
               fmt=FLOAT_FMT, delimiter=",")


def read_matrix_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def write_vector_csv(vec: np.ndarray, path) -> None:
    np.savetxt(path, np.asarray(vec, dtype=float), fmt=FLOAT_FMT)


def read_vector_csv(path) -> np.ndarray:
    return np.loadtxt(path, ndmin=1)


def export_dot(gamma: np.ndarray, significant: np.ndarray | None, excluded_ids,
               path, neuron_ids: list[str] | None = None) -> None:
    """Write the directed interaction graph in DOT format.

    An entry gamma[i, j] != 0 draws an edge from node j to node i (sender to
    receiver).  Positive weights are solid, negative dashed; entries flagged
    insignificant are grey.  Excluded neurons render as white nodes.
    """
    gamma = np.asarray(gamma, dtype=float)
    d = gamma.shape[0]
    if neuron_ids is None:
        neuron_ids = [f"neuron_{i + 1}" for i in range(d)]
    excluded = set(excluded_ids or ())
    lines = ["digraph interactions {",
             "  node [shape=circle, style=filled, fillcolor=lightgrey];"]
    for nid in neuron_ids:
        attr = " [fillcolor=white]" if nid in excluded else ""
        lines.append(f'  "{nid}"{attr};')
    for i in range(d):
        for j in range(d):
            w = gamma[i, j]
            if w == 0.0:
                continue
            style = "solid" if w > 0 else "dashed"
            grey = significant is not None and not bool(significant[i, j])
            color = "grey" if grey else "black"
            lines.append(
                f'  "{neuron_ids[j]}" -> "{neuron_ids[i]}" '
                f'[style={style}, color={color}, tooltip="{w:.9g}"];'
            )
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n")
