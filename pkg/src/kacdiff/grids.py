"""Tensor grids with quadrature weights for sampled densities.

A DensityGrid is a list of axes (nodes plus quadrature weights) and an
array of values on the tensor product of the nodes.  Gauss-Hermite axes
are used for moment and entropy quadratures against Gaussian-type
integrands; regular axes for histograms and finite-difference stencils.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class Axis:
    nodes: np.ndarray
    weights: np.ndarray
    kind: str = "regular"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.shape != weights.shape or nodes.ndim != 1:
            raise ValueError("nodes and weights must be 1-d arrays of equal length")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    def __len__(self):
        return self.nodes.size


def regular_axis(lo: float, hi: float, n: int) -> Axis:
    """Midpoints of n equal bins on [lo, hi]; weight = bin width."""
    edges = np.linspace(lo, hi, n + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    w = np.full(n, (hi - lo) / n)
    return Axis(mid, w, "regular")


def uniform_node_axis(lo: float, hi: float, n: int) -> Axis:
    """n nodes including endpoints; trapezoid weights.  For FD stencils."""
    nodes = np.linspace(lo, hi, n)
    h = (hi - lo) / (n - 1)
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return Axis(nodes, w, "uniform")


def gauss_hermite_axis(center: float, temperature: float, n: int = 40) -> Axis:
    """Gauss-Hermite nodes matched to a Gaussian of variance ``temperature``.

    Quadrature is exact for exp(-(x-center)^2/(2T)) times polynomials of
    degree < 2n.
    """
    x, w = np.polynomial.hermite.hermgauss(n)
    scale = np.sqrt(2.0 * temperature)
    nodes = center + scale * x
    weights = w * np.exp(x * x) * scale
    return Axis(nodes, weights, "gauss_hermite")


def gauss_legendre_axis(lo: float, hi: float, n: int) -> Axis:
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (hi - lo)
    return Axis(lo + half * (x + 1.0), w * half, "gauss_legendre")


@dataclass
class DensityGrid:
    """Sampled (possibly signed) function on a tensor grid.

    ``order`` is the marginal order n the values refer to (the grid itself
    may have fewer axes than 3n when only selected components are gridded,
    e.g. histograms of single Cartesian components).
    """

    axes: list
    values: np.ndarray
    order: int = 1
    is_density: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        shape = tuple(len(ax) for ax in self.axes)
        if self.values.shape != shape:
            raise ValueError(f"values shape {self.values.shape} != grid shape {shape}")
        if self.is_density and abs(self.mass() - 1.0) > 1e-8:
            raise ValueError(f"flagged as density but mass={self.mass()}")

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def meshes(self):
        return np.meshgrid(*(ax.nodes for ax in self.axes), indexing="ij")

    def weight_array(self) -> np.ndarray:
        w = self.axes[0].weights
        for ax in self.axes[1:]:
            w = np.multiply.outer(w, ax.weights)
        return w

    def integrate(self, integrand: np.ndarray | None = None) -> float:
        vals = self.values if integrand is None else self.values * integrand
        return float(np.sum(vals * self.weight_array()))

    def mass(self) -> float:
        return self.integrate()

    def l1_distance(self, other: "DensityGrid") -> float:
        if self.values.shape != other.values.shape:
            raise ValueError("grids must share the same shape")
        return float(np.sum(np.abs(self.values - other.values) * self.weight_array()))

    def with_values(self, values: np.ndarray, is_density: bool = False) -> "DensityGrid":
        return DensityGrid(self.axes, values, order=self.order, is_density=is_density)

    def save_csv(self, path):
        """Axis header lines, then one `v1,...,vd,value` row per node (C order)."""
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv_text())

    @classmethod
    def load_csv(cls, path) -> "DensityGrid":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        order = int(rows[0][1])
        ndim = int(rows[0][3])
        axes = []
        for i in range(ndim):
            nrow = rows[1 + 2 * i]
            wrow = rows[2 + 2 * i]
            axes.append(Axis(np.array(nrow[2:], dtype=float), np.array(wrow[2:], dtype=float), nrow[1]))
        data = rows[2 + 2 * ndim :]
        values = np.array([r[-1] for r in data], dtype=float)
        shape = tuple(len(ax) for ax in axes)
        return cls(axes, values.reshape(shape), order=order)

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["order", self.order, "ndim", self.ndim])
        for i, ax in enumerate(self.axes):
            writer.writerow([f"axis{i + 1}", ax.kind] + [FLOAT_FMT % x for x in ax.nodes])
            writer.writerow([f"weights{i + 1}", ax.kind] + [FLOAT_FMT % x for x in ax.weights])
        writer.writerow([f"v{i + 1}" for i in range(self.ndim)] + ["value"])
        meshes = self.meshes()
        flat = [m.reshape(-1) for m in meshes] + [self.values.reshape(-1)]
        for row in zip(*flat):
            writer.writerow([FLOAT_FMT % x for x in row])
        return buf.getvalue()


def tensor_eval(axes, fn) -> np.ndarray:
    """Evaluate fn on the tensor grid; fn maps stacked coordinates (..., d) to (...)."""
    meshes = np.meshgrid(*(ax.nodes for ax in axes), indexing="ij")
    pts = np.stack(meshes, axis=-1)
    return fn(pts)
