"""Event data model, text-file ingestion, windowing and spike encoding.

Events are kept columnar (``EventArray``) for bulk work; the scalar ``Event``
tuple exists for line-by-line parsing and for small hand-built streams.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

STEP_SECONDS = 0.001


class EventParseError(ValueError):
    """Malformed or out-of-range line in an event file."""

    def __init__(self, lineno: int, msg: str):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


class EventOrderError(ValueError):
    """Timestamps went backwards in a stream that must be sorted."""

    def __init__(self, lineno: int, t_prev: float, t: float):
        super().__init__(f"line {lineno}: timestamp {t!r} precedes {t_prev!r}")
        self.lineno = lineno


class EncodingError(ValueError):
    pass


class Event(NamedTuple):
    t: float
    x: int
    y: int
    p: int


@dataclass
class EventArray:
    """Columnar event stream sorted by ``t``."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.float64)
        self.x = np.asarray(self.x, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.p = np.asarray(self.p, dtype=np.int8)
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns differ in length")

    @classmethod
    def empty(cls) -> "EventArray":
        return cls(np.zeros(0), np.zeros(0), np.zeros(0), np.zeros(0))

    @classmethod
    def from_events(cls, events: Iterable[Event]) -> "EventArray":
        events = list(events)
        if not events:
            return cls.empty()
        t, x, y, p = zip(*events)
        return cls(np.array(t), np.array(x), np.array(y), np.array(p))

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for t, x, y, p in zip(self.t.tolist(), self.x.tolist(), self.y.tolist(), self.p.tolist()):
            yield Event(t, x, y, p)

    def __getitem__(self, idx) -> "EventArray":
        if isinstance(idx, (int, np.integer)):
            idx = slice(idx, idx + 1)
        return EventArray(self.t[idx], self.x[idx], self.y[idx], self.p[idx])

    def slice_time(self, t0: float, t1: float, closed_left: bool = True) -> "EventArray":
        """Events with ``t0 <= t <= t1`` (``t0 < t`` when ``closed_left`` is False)."""
        lo = np.searchsorted(self.t, t0, side="left" if closed_left else "right")
        hi = np.searchsorted(self.t, t1, side="right")
        return self[lo:hi]

    def count_between(self, t0: float, t1: float) -> int:
        """Number of events with ``t0 < t <= t1``."""
        return int(np.searchsorted(self.t, t1, side="right") - np.searchsorted(self.t, t0, side="right"))


@dataclass
class EventWindow:
    events: EventArray
    t_start: float
    t_end: float

    def __post_init__(self):
        if not self.t_end > self.t_start:
            raise ValueError("window length must be positive")

    @property
    def length(self) -> float:
        return self.t_end - self.t_start

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class SpikeFrame:
    bits: np.ndarray
    step_index: int

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class EncoderConfig:
    sensor_width: int = 346
    sensor_height: int = 260
    grid_w: int = 32
    grid_h: int = 24
    split_polarity: bool = False
    step: float = STEP_SECONDS

    @property
    def size(self) -> int:
        n = self.grid_w * self.grid_h
        return 2 * n if self.split_polarity else n


def _check_bounds(x, y, width: int, height: int) -> np.ndarray:
    return (x >= 0) & (x < width) & (y >= 0) & (y < height)


def parse_event_file(path, sensor_dims: tuple[int, int], strict_order: bool = True) -> Iterator[Event]:
    """Yield events from a ``t x y p`` text file in file order.

    Blank lines and ``#`` comments are skipped. With ``strict_order`` a
    decreasing timestamp raises :class:`EventOrderError`; otherwise use
    :func:`load_events` with ``sort=True`` to get a sorted stream.
    """
    width, height = sensor_dims
    t_prev = -np.inf
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise EventParseError(lineno, f"expected 4 fields, got {len(parts)}")
            try:
                t = float(parts[0])
                x, y, p = int(parts[1]), int(parts[2]), int(parts[3])
            except ValueError as exc:
                raise EventParseError(lineno, str(exc)) from None
            if not np.isfinite(t) or t < 0:
                raise EventParseError(lineno, f"bad timestamp {parts[0]!r}")
            if p not in (0, 1):
                raise EventParseError(lineno, f"polarity {p} not in {{0, 1}}")
            if not (0 <= x < width and 0 <= y < height):
                raise EventParseError(lineno, f"pixel ({x}, {y}) outside {width}x{height} sensor")
            if strict_order and t < t_prev:
                raise EventOrderError(lineno, t_prev, t)
            t_prev = max(t_prev, t)
            yield Event(t, x, y, p)


def load_events(path, sensor_dims: tuple[int, int], sort: bool = False) -> EventArray:
    """Read a whole event file into an :class:`EventArray`.

    ``sort=True`` tolerates out-of-order timestamps and returns a stably
    sorted stream; otherwise ordering violations raise.
    """
    arr = EventArray.from_events(parse_event_file(path, sensor_dims, strict_order=not sort))
    if sort and len(arr):
        order = np.argsort(arr.t, kind="stable")
        arr = arr[order]
    return arr


def write_events(path, events: EventArray | Iterable[Event]) -> None:
    """Write events as ``t x y p`` lines; ``repr`` floats so a re-parse is exact."""
    if not isinstance(events, EventArray):
        events = EventArray.from_events(events)
    path = Path(path)
    with path.open("w") as fh:
        for ev in events:
            fh.write(f"{ev.t!r} {ev.x} {ev.y} {ev.p}\n")


def window_events(stream: EventArray | Sequence[Event], t: float, t_w: float) -> EventWindow:
    """Events with timestamp in the closed interval ``[t - t_w, t]``."""
    if not t_w > 0:
        raise ValueError("t_w must be positive")
    if not isinstance(stream, EventArray):
        stream = EventArray.from_events(stream)
    return EventWindow(stream.slice_time(t - t_w, t), t - t_w, t)


def cell_index(x, y, p, cfg: EncoderConfig) -> np.ndarray:
    """Map pixel coordinates to encoder cell indices (row-major over the grid)."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if not np.all(_check_bounds(x, y, cfg.sensor_width, cfg.sensor_height)):
        raise EncodingError("event outside sensor bounds")
    gx = x * cfg.grid_w // cfg.sensor_width
    gy = y * cfg.grid_h // cfg.sensor_height
    idx = gy * cfg.grid_w + gx
    if cfg.split_polarity:
        idx = idx + np.asarray(p, dtype=np.int64) * (cfg.grid_w * cfg.grid_h)
    return idx


def encode_spikes(window_slice: EventArray | Sequence[Event], cfg: EncoderConfig, step_index: int = 0) -> SpikeFrame:
    """Binary spike vector for one network step: a cell is 1 iff it saw any event."""
    if not isinstance(window_slice, EventArray):
        window_slice = EventArray.from_events(window_slice)
    bits = np.zeros(cfg.size, dtype=np.uint8)
    if len(window_slice):
        bits[cell_index(window_slice.x, window_slice.y, window_slice.p, cfg)] = 1
    return SpikeFrame(bits, step_index)


def step_of(t, step: float = STEP_SECONDS) -> np.ndarray:
    """Network step index holding timestamp ``t``: step k covers ``(k*step, (k+1)*step]``."""
    return np.ceil(np.asarray(t) / step - 1e-9).astype(np.int64) - 1


def encode_stream(events: EventArray, cfg: EncoderConfig, n_steps: int) -> np.ndarray:
    """Encode a whole stream into an ``(n_steps, IN)`` uint8 spike raster.

    Row k collects events in ``(k*step, (k+1)*step]``, so the frames available
    at decision time ``t = n*step`` are rows ``< n``. Events at ``t == 0`` land
    in row 0.
    """
    raster = np.zeros((n_steps, cfg.size), dtype=np.uint8)
    if len(events) == 0:
        return raster
    rows = np.maximum(step_of(events.t, cfg.step), 0)
    keep = rows < n_steps
    cols = cell_index(events.x[keep], events.y[keep], events.p[keep], cfg)
    raster[rows[keep], cols] = 1
    return raster
