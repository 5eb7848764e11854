"""Observed values per entity, indexed by (process, slice)."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

import numpy as np

from .model import ItbnStructure
from .timegrid import Timeline, to_fraction, to_ticks


class DataError(ValueError):
    pass


@dataclass
class EntityData:
    timeline: Timeline
    values: dict[tuple[str, int], float] = field(default_factory=dict)

    def observed_series(self, process: str, offset: Fraction = Fraction(0)) -> tuple[np.ndarray, np.ndarray]:
        """Node times and values of the observed slices of one process, time ordered."""
        times = self.timeline.exact_times
        pairs = sorted((times[j] + offset, v) for (p, j), v in self.values.items() if p == process)
        t = np.array([float(a) for a, _ in pairs])
        v = np.array([b for _, b in pairs], dtype=float)
        return t, v

    def complete_slices(self, processes: Iterable[str]) -> list[bool]:
        processes = list(processes)
        return [all((p, j) in self.values for p in processes) for j in range(len(self.timeline))]

    def is_irregularly_complete(self, processes: Iterable[str]) -> bool:
        """Fully observed on a prefix of slices and unobserved after it."""
        processes = list(processes)
        full = self.complete_slices(processes)
        n = 0
        while n < len(full) and full[n]:
            n += 1
        return not any((p, j) in self.values for p in processes for j in range(n, len(full)))


@dataclass
class ObservationSet:
    entities: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.entities)

    def __iter__(self):
        return iter(self.entities.items())

    @classmethod
    def from_records(cls, records: Iterable, structure: ItbnStructure) -> "ObservationSet":
        """Build from ``(entity, time, process, value)`` records.

        Slice times are observation times minus the process placement offset;
        each entity's timeline is the sorted union over its processes.
        """
        res = structure.resolution
        offsets = {p.name: p.offset for p in structure.processes}
        raw: dict = {}
        for row, (entity, time, process, value) in enumerate(records, start=1):
            if process not in offsets:
                raise DataError(f"record {row}: unknown process {process!r}")
            ticks = to_ticks(to_fraction(time) - offsets[process], res)
            key = (process, ticks)
            bucket = raw.setdefault(entity, {})
            if key in bucket:
                raise DataError(f"record {row}: duplicate observation ({entity}, {time}, {process})")
            bucket[key] = float(value)
        out = cls()
        for entity, bucket in raw.items():
            ticks = sorted({t for _, t in bucket})
            pos = {t: j for j, t in enumerate(ticks)}
            tl = Timeline(tuple(ticks), res, entity)
            out.entities[entity] = EntityData(tl, {(p, pos[t]): v for (p, t), v in bucket.items()})
        return out

    def to_records(self, structure: ItbnStructure) -> list[tuple]:
        offsets = {p.name: p.offset for p in structure.processes}
        order = {n: i for i, n in enumerate(structure.names)}
        rows = []
        for entity, data in self.entities.items():
            times = data.timeline.exact_times
            for (p, j), v in data.values.items():
                rows.append((entity, times[j] + offsets[p], p, v))
        rows.sort(key=lambda r: (str(r[0]), r[1], order.get(r[2], 0)))
        return rows

    def merged(self, other: "ObservationSet") -> "ObservationSet":
        clash = set(self.entities) & set(other.entities)
        if clash:
            raise DataError(f"entities present in both sets: {sorted(map(str, clash))}")
        return ObservationSet({**self.entities, **other.entities})

    def is_irregularly_complete(self, processes: Iterable[str]) -> bool:
        processes = list(processes)
        return all(d.is_irregularly_complete(processes) for d in self.entities.values())
