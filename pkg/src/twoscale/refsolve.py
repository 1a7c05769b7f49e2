"""Reference solutions: classical RK4, 3-stage Radau IIA, closed forms.

All integrators return a :class:`GridSolution` that stores node values and
right-hand sides and interpolates with cubic Hermite polynomials.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from .problems import DomainError, ProblemSpec, linear_bvp_exact


class SolverError(RuntimeError):
    """Integration failed (overflow, Newton breakdown, step-size collapse)."""


@dataclass(frozen=True)
class OdeField:
    n: int
    f: Callable[[float, np.ndarray], np.ndarray]
    jac: Callable[[float, np.ndarray], np.ndarray] | None = None
    eps_min: float | None = None

    def jacobian(self, t: float, y: np.ndarray, fy: np.ndarray | None = None) -> np.ndarray:
        if self.jac is not None:
            return np.asarray(self.jac(t, y), dtype=float)
        fy = self.f(t, y) if fy is None else fy
        J = np.empty((self.n, self.n))
        for j in range(self.n):
            h = 1e-7 * (1.0 + abs(y[j]))
            yp = y.copy()
            yp[j] += h
            J[:, j] = (self.f(t, yp) - fy) / h
        return J


def field_from_problem(problem: ProblemSpec) -> OdeField:
    if problem.rhs is None:
        raise DomainError(f"{problem.name} has no explicit first-order form")
    return OdeField(problem.n, problem.rhs, problem.jacobian, min(problem.eps_vec))


@dataclass
class GridSolution:
    t: np.ndarray
    y: np.ndarray
    dydt: np.ndarray
    method: str = ""
    stats: dict | None = None

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.dydt = np.asarray(self.dydt, dtype=float)
        if self.y.ndim == 1:
            self.y = self.y[:, None]
            self.dydt = self.dydt[:, None]
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("time grid must be strictly increasing")

    def __call__(self, times):
        return sample_at(self, times)

    def to_csv(self, path, names=None, times=None) -> None:
        write_csv(path, self, names, times)


def sample_at(solution: GridSolution, times) -> np.ndarray:
    """Cubic Hermite interpolation; returns shape ``(len(times), n)``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    t = solution.t
    span = t[-1] - t[0]
    tol = 1e-12 * max(1.0, span)
    if np.any(times < t[0] - tol) or np.any(times > t[-1] + tol):
        raise DomainError(f"sample times outside [{t[0]}, {t[-1]}]")
    times = np.clip(times, t[0], t[-1])
    if t.size == 1:
        return np.repeat(solution.y[:1], times.size, axis=0)
    i = np.clip(np.searchsorted(t, times, side="right") - 1, 0, t.size - 2)
    h = (t[i + 1] - t[i])[:, None]
    s = ((times - t[i]) / h[:, 0])[:, None]
    y0, y1 = solution.y[i], solution.y[i + 1]
    f0, f1 = solution.dydt[i], solution.dydt[i + 1]
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    out = h00 * y0 + h10 * h * f0 + h01 * y1 + h11 * h * f1
    exact = times == t[i + 1]
    out[exact] = y1[exact]
    exact = times == t[i]
    out[exact] = y0[exact]
    return out


def write_csv(path, solution: GridSolution, names=None, times=None) -> None:
    """Columns ``tau, <components...>``; on ``times`` if given, else the nodes."""
    times = solution.t if times is None else np.asarray(times, dtype=float)
    vals = sample_at(solution, times)
    names = list(names) if names else [f"u{j}" for j in range(vals.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau", *names])
        for tk, row in zip(times, vals):
            w.writerow([repr(float(tk)), *(repr(float(x)) for x in row)])


def read_csv(path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    data = np.array([[float(x) for x in r] for r in rows[1:]])
    return data[:, 0], data[:, 1:], rows[0][1:]


# ---------------------------------------------------------------------------
# explicit RK4
# ---------------------------------------------------------------------------


def rk4_solve(field: OdeField, u0, h: float, t_span=(0.0, 1.0)) -> GridSolution:
    """Classical RK4 at fixed step ``h``; a short final step closes the interval."""
    t0, tf = map(float, t_span)
    if not h > 0:
        raise ValueError(f"step must be positive, got {h}")
    n_full = int(math.floor((tf - t0) / h + 1e-9))
    times = t0 + h * np.arange(n_full + 1)
    if tf - times[-1] > 1e-9 * h:
        times = np.append(times, tf)
    else:
        times[-1] = tf
    f = field.f
    y = np.array(u0, dtype=float)
    ys = np.empty((times.size, y.size))
    fs = np.empty_like(ys)
    ys[0] = y
    k1 = np.asarray(f(times[0], y), dtype=float)
    fs[0] = k1
    # overflow is reported through the finiteness check below
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(times.size - 1):
            t, dt = times[i], times[i + 1] - times[i]
            k2 = f(t + dt / 2, y + dt / 2 * k1)
            k3 = f(t + dt / 2, y + dt / 2 * k2)
            k4 = f(t + dt, y + dt * k3)
            y = y + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise SolverError(f"RK4 state became non-finite at t={times[i + 1]:.6g} (stiff or unstable step)")
            k1 = np.asarray(f(times[i + 1], y), dtype=float)
            ys[i + 1] = y
            fs[i + 1] = k1
    return GridSolution(times, ys, fs, "rk4", {"h": h, "steps": times.size - 1})


# ---------------------------------------------------------------------------
# Radau IIA (3 stages, order 5)
# ---------------------------------------------------------------------------

S6 = math.sqrt(6.0)
RADAU_C = np.array([(4 - S6) / 10, (4 + S6) / 10, 1.0])
RADAU_A = np.array([
    [(88 - 7 * S6) / 360, (296 - 169 * S6) / 1800, (-2 + 3 * S6) / 225],
    [(296 + 169 * S6) / 1800, (88 + 7 * S6) / 360, (-2 - 3 * S6) / 225],
    [(16 - S6) / 36, (16 + S6) / 36, 1 / 9],
])
# embedded error estimate (Hairer & Wanner, RADAU5)
RADAU_E = np.array([-13 - 7 * S6, -13 + 7 * S6, -1]) / 3
RADAU_GAMMA = 3 + 3 ** (2 / 3) - 3 ** (1 / 3)

NEWTON_MAXITER = 7
MIN_FACTOR, MAX_FACTOR = 0.2, 5.0


def _collocation(field: OdeField, t, y, h, J, scale, tol, Z0=None):
    """Simplified Newton on the stage increments ``Z``; returns (Z, converged, iters)."""
    n = y.size
    M = np.eye(3 * n) - h * np.kron(RADAU_A, J)
    lu = lu_factor(M)
    Z = np.zeros((3, n)) if Z0 is None else Z0.copy()
    prev = None
    for k in range(1, NEWTON_MAXITER + 1):
        F = np.array([field.f(t + RADAU_C[i] * h, y + Z[i]) for i in range(3)])
        if not np.all(np.isfinite(F)):
            return Z, False, k
        G = Z - h * (RADAU_A @ F)
        dZ = lu_solve(lu, -G.ravel()).reshape(3, n)
        Z = Z + dZ
        nrm = float(np.sqrt(np.mean((dZ / scale) ** 2)))
        if prev is not None and prev > 0:
            rate = nrm / prev
            if rate >= 1.0:
                return Z, False, k
            if rate / (1 - rate) * nrm < tol:
                return Z, True, k
        elif nrm < 1e-3 * tol or nrm == 0.0:
            return Z, True, k
        prev = nrm
    return Z, False, NEWTON_MAXITER


def radau5_step(field: OdeField, t: float, y: np.ndarray, h: float, tol: float = 1e-14):
    """One fixed Radau IIA step with Newton driven to ``tol`` (absolute)."""
    y = np.asarray(y, dtype=float)
    J = field.jacobian(t, y)
    scale = np.ones_like(y)
    Z, ok, _ = _collocation(field, t, y, h, J, scale, tol)
    if not ok:
        raise SolverError(f"Newton iteration failed at t={t:.6g}, h={h:.3g}")
    return y + Z[2]


def radau5_fixed(field: OdeField, u0, h: float, t_span=(0.0, 1.0)) -> GridSolution:
    """Radau IIA with a fixed step, for convergence studies."""
    t0, tf = map(float, t_span)
    nsteps = max(1, int(round((tf - t0) / h)))
    times = np.linspace(t0, tf, nsteps + 1)
    y = np.array(u0, dtype=float)
    ys, fs = [y], [np.asarray(field.f(t0, y), dtype=float)]
    for i in range(nsteps):
        y = radau5_step(field, times[i], y, times[i + 1] - times[i])
        ys.append(y)
        fs.append(np.asarray(field.f(times[i + 1], y), dtype=float))
    return GridSolution(times, np.array(ys), np.array(fs), "radau5-fixed", {"h": h, "steps": nsteps})


def radau5_solve(field: OdeField, u0, rtol: float = 1e-10, atol: float = 1e-12, t_span=(0.0, 1.0),
                 h0: float | None = None, h_min: float = 1e-14, max_steps: int = 500_000) -> GridSolution:
    """Adaptive Radau IIA with simplified Newton and the embedded error estimate."""
    if not (rtol > 0 and atol > 0):
        raise ValueError("rtol and atol must be positive")
    t0, tf = map(float, t_span)
    y = np.array(u0, dtype=float)
    n = y.size
    if h0 is None:
        h0 = 1e-6 if field.eps_min is None else min(1e-6, field.eps_min / 10)
    h = min(h0, tf - t0)
    newton_tol = max(10 * np.finfo(float).eps / rtol, min(0.03, rtol ** 0.5))
    t = t0
    fy = np.asarray(field.f(t, y), dtype=float)
    ts, ys, fs = [t], [y.copy()], [fy.copy()]
    n_acc = n_rej = n_newton_fail = 0
    I = np.eye(n)
    for _ in range(max_steps):
        if t >= tf:
            break
        h = min(h, tf - t)
        J = field.jacobian(t, y, fy)
        rejected = False
        while True:
            if h < h_min:
                raise SolverError(
                    f"step size collapsed below {h_min:g} at t={t:.6g} "
                    f"(accepted={n_acc}, rejected={n_rej}, newton failures={n_newton_fail})")
            scale = atol + np.abs(y) * rtol
            Z, ok, iters = _collocation(field, t, y, h, J, scale, newton_tol)
            if not ok:
                n_newton_fail += 1
                h *= 0.5
                rejected = True
                continue
            y_new = y + Z[2]
            ZE = (RADAU_E @ Z) / h
            lu = lu_factor(RADAU_GAMMA / h * I - J)
            err = lu_solve(lu, fy + ZE)
            scale = atol + np.maximum(np.abs(y), np.abs(y_new)) * rtol
            err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            if rejected and err_norm > 1:
                err = lu_solve(lu, np.asarray(field.f(t, y + err), dtype=float) + ZE)
                err_norm = float(np.sqrt(np.mean((err / scale) ** 2)))
            safety = 0.9 * (2 * NEWTON_MAXITER + 1) / (2 * NEWTON_MAXITER + iters)
            if err_norm > 1 or not np.isfinite(err_norm):
                factor = MIN_FACTOR if not np.isfinite(err_norm) else max(MIN_FACTOR, safety * err_norm ** -0.25)
                h *= factor
                n_rej += 1
                rejected = True
                continue
            break
        t_new = t + h
        if tf - t_new < 1e-14 * max(1.0, abs(tf)):
            t_new = tf
        y = y_new
        t = t_new
        fy = np.asarray(field.f(t, y), dtype=float)
        ts.append(t)
        ys.append(y.copy())
        fs.append(fy.copy())
        n_acc += 1
        factor = MAX_FACTOR if err_norm == 0 else min(MAX_FACTOR, safety * err_norm ** -0.25)
        if rejected:
            factor = min(1.0, factor)
        h *= factor
    else:
        raise SolverError(f"exceeded {max_steps} steps at t={t:.6g}")
    return GridSolution(np.array(ts), np.array(ys), np.array(fs), "radau5",
                        {"rtol": rtol, "atol": atol, "accepted": n_acc, "rejected": n_rej,
                         "newton_failures": n_newton_fail})


# ---------------------------------------------------------------------------
# closed form
# ---------------------------------------------------------------------------


def exact_bvp(eps: float, times) -> GridSolution:
    """Closed-form solution of the coupled second-order example on ``times``."""
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    times = np.asarray(times, dtype=float)
    u, du, _ = linear_bvp_exact(eps, times)
    return GridSolution(times, u, du, "exact", {"eps": eps})


def reference_solution(problem: ProblemSpec, method: str = "auto", h: float = 1e-5,
                       rtol: float = 1e-10, atol: float = 1e-12, grid=None) -> GridSolution:
    """Reference for a catalog problem: closed form when known, else an integrator."""
    if problem.exact is not None and method in ("auto", "exact"):
        grid = np.linspace(0.0, 1.0, 10001) if grid is None else grid
        u, du, _ = problem.exact(np.asarray(grid, dtype=float))
        return GridSolution(grid, u, du, "exact")
    field = field_from_problem(problem)
    u0 = problem.initial_state()
    if method == "rk4":
        return rk4_solve(field, u0, h)
    if method in ("auto", "radau"):
        return radau5_solve(field, u0, rtol, atol)
    raise ValueError(f"unknown reference method {method!r}")


def observed_order(steps, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(step)``."""
    return float(np.polyfit(np.log(np.asarray(steps, dtype=float)), np.log(np.asarray(errors, dtype=float)), 1)[0])
