"""Online per-column normalisers built from count, sum and sum of squares."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import ops
from .diffcore.tape import value_of
from .graphs import Graph

EPS = 1e-8
# floor used by model input normalisers: columns that never vary in the data
# (e.g. off-plane components) must not amplify round-off drift during rollouts
INPUT_EPS = 1e-4


@dataclass(frozen=True)
class NormStats:
    count: float
    total: np.ndarray
    total_sq: np.ndarray
    eps: float = EPS

    @classmethod
    def empty(cls, width: int, eps: float = EPS) -> NormStats:
        if eps <= 0:
            raise ValueError("eps must be positive")
        return cls(0.0, np.zeros(width), np.zeros(width), eps)

    @property
    def width(self) -> int:
        return self.total.shape[0]

    @property
    def mean(self) -> np.ndarray:
        if self.count < 1:
            return np.zeros(self.width)
        return self.total / self.count

    @property
    def std(self) -> np.ndarray:
        """Population standard deviation, clamped at zero variance."""
        if self.count < 1:
            return np.ones(self.width)
        var = self.total_sq / self.count - self.mean**2
        return np.sqrt(np.maximum(var, 0.0))

    @property
    def active(self) -> bool:
        return self.count >= 2

    def scale(self) -> np.ndarray:
        return np.maximum(self.std, self.eps)

    def accumulate(self, rows) -> NormStats:
        rows = np.asarray(value_of(rows), dtype=np.float64)
        if rows.size == 0:
            return self
        rows = rows.reshape(-1, rows.shape[-1])
        if rows.shape[1] != self.width:
            raise ValueError(f"normaliser width {self.width} does not match rows of width {rows.shape[1]}")
        return NormStats(
            self.count + rows.shape[0],
            self.total + rows.sum(axis=0),
            self.total_sq + (rows * rows).sum(axis=0),
            self.eps,
        )

    def denormalize_cols(self, x, start: int, stop: int):
        return denormalize_cols(self, x, start, stop)

    def to_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        return {
            f"{prefix}/count": np.array(self.count),
            f"{prefix}/sum": self.total,
            f"{prefix}/sumsq": self.total_sq,
            f"{prefix}/eps": np.array(self.eps),
        }

    @classmethod
    def from_arrays(cls, arrays, prefix: str) -> NormStats:
        eps = float(arrays[f"{prefix}/eps"]) if f"{prefix}/eps" in arrays else EPS
        return cls(float(arrays[f"{prefix}/count"]), arrays[f"{prefix}/sum"], arrays[f"{prefix}/sumsq"], eps)


def accumulate(stats: NormStats, rows) -> NormStats:
    return stats.accumulate(rows)


def normalize(stats: NormStats, x):
    """(x - mean) / max(std, eps); identity until two rows have been seen."""
    if not stats.active:
        return x
    if ops.is_taped(x):
        return ops.mul(ops.sub(x, stats.mean), 1.0 / stats.scale())
    return (value_of(x) - stats.mean) / stats.scale()


def denormalize(stats: NormStats, x):
    if not stats.active:
        return x
    if ops.is_taped(x):
        return ops.add(ops.mul(x, stats.scale()), stats.mean)
    return value_of(x) * stats.scale() + stats.mean


def denormalize_cols(stats: NormStats, x, start: int, stop: int):
    """Denormalise a column block ``[start, stop)`` of the fitted features."""
    if not stats.active:
        return x
    mean, scale = stats.mean[start:stop], stats.scale()[start:stop]
    if ops.is_taped(x):
        return ops.add(ops.mul(x, scale), mean)
    return value_of(x) * scale + mean


@dataclass(frozen=True)
class GraphNormalizer:
    """One :class:`NormStats` per graph component, shared by every node/edge."""

    globals: NormStats
    nodes: NormStats
    edges: NormStats

    @classmethod
    def empty(cls, widths, eps: float = EPS) -> GraphNormalizer:
        wg, wn, we = widths
        return cls(NormStats.empty(wg, eps), NormStats.empty(wn, eps), NormStats.empty(we, eps))

    def accumulate(self, g: Graph) -> GraphNormalizer:
        return GraphNormalizer(
            self.globals.accumulate(g.globals), self.nodes.accumulate(g.nodes), self.edges.accumulate(g.edges)
        )

    def normalize(self, g: Graph) -> Graph:
        return g.with_features(
            normalize(self.globals, g.globals), normalize(self.nodes, g.nodes), normalize(self.edges, g.edges)
        )

    def denormalize(self, g: Graph) -> Graph:
        return g.with_features(
            denormalize(self.globals, g.globals), denormalize(self.nodes, g.nodes), denormalize(self.edges, g.edges)
        )

    def to_arrays(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for part in ("globals", "nodes", "edges"):
            out.update(getattr(self, part).to_arrays(f"{prefix}/{part}"))
        return out

    @classmethod
    def from_arrays(cls, arrays, prefix: str) -> GraphNormalizer:
        return cls(*(NormStats.from_arrays(arrays, f"{prefix}/{p}") for p in ("globals", "nodes", "edges")))

