"""Pointwise and norm-wise errors between a network and a reference."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .problems import DomainError

REL_FLOOR = 1e-12
DEFAULT_GRID_POINTS = 1001
L2_CONVENTION = "rms"


def uniform_grid(n: int = DEFAULT_GRID_POINTS) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


@dataclass
class ErrorReport:
    """Errors per component; ``scales[j] = 10**m_j`` multiplies the scaled fields.

    ``linf``/``l2`` are unscaled; ``scaled_linf``/``scaled_l2`` carry the
    factor.  ``l2`` is the root mean square over grid points.
    """

    grid: np.ndarray
    nn: np.ndarray
    ref: np.ndarray
    abs_err: np.ndarray
    rel_err: np.ndarray
    linf: np.ndarray
    l2: np.ndarray
    scales: np.ndarray
    names: list[str] = field(default_factory=list)
    rel_floor: float = REL_FLOOR

    @property
    def scaled_linf(self) -> np.ndarray:
        return self.scales * self.linf

    @property
    def scaled_l2(self) -> np.ndarray:
        return self.scales * self.l2

    @property
    def rel_linf(self) -> np.ndarray:
        """``max|nn - ref| / max|ref|`` per component."""
        return self.linf / np.maximum(np.max(np.abs(self.ref), axis=0), self.rel_floor)

    def summary(self) -> dict:
        out = {"l2_convention": L2_CONVENTION, "rel_floor": self.rel_floor, "grid_points": int(self.grid.size),
               "components": {}}
        for j, name in enumerate(self.names):
            out["components"][name] = {
                "scale": float(self.scales[j]),
                "linf": float(self.linf[j]),
                "l2": float(self.l2[j]),
                "scaled_linf": float(self.scaled_linf[j]),
                "scaled_l2": float(self.scaled_l2[j]),
                "rel_linf": float(self.rel_linf[j]),
            }
        return out

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)

    def to_csv(self, path) -> None:
        """``tau, ref_j, nn_j, abs_err_j, rel_err_j`` for every component ``j``."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            head = ["tau"]
            for name in self.names:
                head += [f"ref_{name}", f"nn_{name}", f"abs_err_{name}", f"rel_err_{name}"]
            w.writerow(head)
            for i, t in enumerate(self.grid):
                row = [repr(float(t))]
                for j in range(len(self.names)):
                    row += [repr(float(x)) for x in (self.ref[i, j], self.nn[i, j],
                                                     self.abs_err[i, j], self.rel_err[i, j])]
                w.writerow(row)


def error_report(nn_values, ref_values, grid=None, scale_exponent=0, names=None,
                 rel_floor: float = REL_FLOOR) -> ErrorReport:
    """Compare ``(N, n)`` network values against the reference on ``grid``.

    ``scale_exponent`` is one integer ``m`` for all components or one per
    component.
    """
    nn = np.asarray(nn_values, dtype=float)
    ref = np.asarray(ref_values, dtype=float)
    if nn.ndim == 1:
        nn = nn[:, None]
    if ref.ndim == 1:
        ref = ref[:, None]
    if nn.shape != ref.shape:
        raise DomainError(f"length mismatch: nn {nn.shape} vs ref {ref.shape}")
    grid = uniform_grid(nn.shape[0]) if grid is None else np.asarray(grid, dtype=float)
    if grid.shape[0] != nn.shape[0]:
        raise DomainError(f"grid has {grid.shape[0]} points, values have {nn.shape[0]}")
    n = nn.shape[1]
    m = np.broadcast_to(np.asarray(scale_exponent), (n,))
    abs_err = np.abs(nn - ref)
    rel_err = abs_err / np.maximum(np.abs(ref), rel_floor)
    return ErrorReport(
        grid, nn, ref, abs_err, rel_err,
        abs_err.max(axis=0), np.sqrt(np.mean(abs_err ** 2, axis=0)),
        10.0 ** m.astype(float), list(names) if names else [f"u{j}" for j in range(n)], rel_floor,
    )
