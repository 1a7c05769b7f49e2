"""Benchmark singularly perturbed systems in residual form.

Residuals are written ``eps * u' - f`` (never divided through by ``eps``) and
take per-component sequences ``u``, ``du``, ``ddu``.  They use only ``+``,
``-``, ``*`` and integer powers, so the same callable works on floats, numpy
arrays and recorder nodes.

``eps_vec`` holds the leading coefficients of the singular equations after
rescaling.  For the reduced Robertson model that is ``(eps1/eps2, eps1)``,
which makes the geometric mean equal ``eps1 / sqrt(eps2)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .network import ConfigError


class DomainError(ValueError):
    """Problem parameters outside their admissible range."""


@dataclass(frozen=True)
class BoundaryCondition:
    tau: float
    component: int
    value: float


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    n: int
    order: int
    residual: Callable
    conditions: tuple[BoundaryCondition, ...]
    eps_vec: tuple[float, ...]
    params: dict = field(default_factory=dict)
    components: tuple[str, ...] = ()
    # explicit first-order form u' = rhs(t, u) for the reference integrators
    rhs: Callable | None = None
    jacobian: Callable | None = None
    # exact(tau) -> (u, du, ddu) arrays of shape (N, n), when known
    exact: Callable | None = None
    # per-component 10**m factors used when reporting errors
    scale_exponents: tuple[int, ...] = ()
    # coefficient of the highest derivative in each residual equation
    leading: tuple[float, ...] = ()

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ConfigError(f"order must be 1 or 2, got {self.order}")
        if not self.eps_vec or any(not e > 0 for e in self.eps_vec):
            raise DomainError(f"small parameters must be positive, got {self.eps_vec}")
        for bc in self.conditions:
            if bc.tau not in (0.0, 1.0):
                raise ConfigError(f"boundary location {bc.tau} not in {{0, 1}}")
            if not 0 <= bc.component < self.n:
                raise ConfigError(f"boundary component {bc.component} out of range")
        if not self.components:
            object.__setattr__(self, "components", tuple(f"u{i}" for i in range(self.n)))
        if not self.scale_exponents:
            object.__setattr__(self, "scale_exponents", (0,) * self.n)
        if not self.leading:
            object.__setattr__(self, "leading", (1.0,) * self.n)
        if len(self.leading) != self.n or any(c == 0 for c in self.leading):
            raise ConfigError(f"need {self.n} nonzero leading coefficients, got {self.leading}")

    @property
    def effective_epsilon(self) -> float:
        return effective_epsilon(self.eps_vec)

    @property
    def smallest_epsilon(self) -> float:
        return min(self.eps_vec)

    def initial_state(self) -> np.ndarray:
        """``u(0)`` from the conditions (first-order problems)."""
        u0 = np.full(self.n, np.nan)
        for bc in self.conditions:
            if bc.tau == 0.0:
                u0[bc.component] = bc.value
        if np.isnan(u0).any():
            raise ConfigError(f"{self.name}: initial state not fully specified")
        return u0

    def describe(self) -> str:
        ps = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        return f"{self.name}: n={self.n}, order={self.order}, {ps}, eps_eff={self.effective_epsilon:.4g}"


def effective_epsilon(eps_vec: Sequence[float]) -> float:
    """Geometric mean of the small parameters, accumulated in log space."""
    eps = np.asarray(list(eps_vec), dtype=float)
    if eps.size == 0:
        raise DomainError("effective_epsilon needs at least one parameter")
    if not np.all(eps > 0) or not np.all(np.isfinite(eps)):
        raise DomainError(f"small parameters must be positive and finite, got {eps.tolist()}")
    value = math.exp(math.fsum(np.log(eps)) / eps.size)
    # keep the bracketing exact where exp(log(.)) rounds outside
    return min(max(value, float(eps.min())), float(eps.max()))


def resolve_epsilon(problem: ProblemSpec, choice="geometric-mean") -> float:
    """Effective epsilon by name (``geometric-mean``/``smallest``/``largest``) or value."""
    if isinstance(choice, (int, float)):
        return float(choice)
    if choice in ("geometric-mean", "geomean", None):
        return problem.effective_epsilon
    if choice == "smallest":
        return problem.smallest_epsilon
    if choice == "largest":
        return max(problem.eps_vec)
    try:
        return float(choice)
    except ValueError:
        raise ConfigError(f"unknown effective-epsilon choice {choice!r}") from None


def custom(name, n, order, residual, conditions, eps_vec, **kw) -> ProblemSpec:
    """Closure-based constructor for ad hoc problems."""
    conds = tuple(c if isinstance(c, BoundaryCondition) else BoundaryCondition(*c) for c in conditions)
    return ProblemSpec(name, n, order, residual, conds, tuple(float(e) for e in eps_vec), **kw)


# ---------------------------------------------------------------------------
# catalog
# ---------------------------------------------------------------------------


def michaelis_menten(eps: float, lam: float = 1.0, k: float = 2.0) -> ProblemSpec:
    if not lam > 0:
        raise DomainError(f"lambda must be positive, got {lam}")
    if not k > lam:
        raise DomainError(f"need k > lambda, got k={k}, lambda={lam}")
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")

    def residual(tau, u, du, ddu):
        s, c = u
        return (du[0] + s - (s + (k - lam)) * c,
                eps * du[1] - s + (s + k) * c)

    def rhs(t, y):
        s, c = y
        return np.array([-s + (s + k - lam) * c, (s - (s + k) * c) / eps])

    def jacobian(t, y):
        s, c = y
        return np.array([[-1.0 + c, s + k - lam],
                         [(1.0 - c) / eps, -(s + k) / eps]])

    return ProblemSpec(
        "mm-ivp", 2, 1, residual,
        (BoundaryCondition(0.0, 0, 1.0), BoundaryCondition(0.0, 1, 0.0)),
        (float(eps),), {"eps": eps, "lam": lam, "k": k}, ("u", "v"),
        rhs=rhs, jacobian=jacobian, leading=(1.0, float(eps)),
    )


def _ratio(tau, a, eps):
    # (1 - exp(-a tau/eps)) / (1 - exp(-a/eps)) without cancellation
    return np.expm1(-a * tau / eps) / np.expm1(-a / eps)


def linear_bvp_forcing(eps: float, tau):
    """Right-hand sides ``f1``, ``f2`` of the coupled second-order example."""
    tau = np.asarray(tau, dtype=float)
    e = np.exp
    pi = np.pi
    E1 = e(-1.0 / eps)
    E2 = e(-2.0 / eps)
    et = e(-tau / eps)
    e2t = e(-2.0 * tau / eps)
    sn = np.sin(pi * tau / 2)
    cs = np.cos(pi * tau / 2)
    tail = e(tau - 1.0)
    f1 = ((4 * et - sn * pi ** 2 * eps ** 2 * (1 - E1)) / (2 * eps * (-1 + E1))
          + 2 * et / (eps * (1 - E1))
          - pi * cs
          + (4 - 4 * et) / (-1 + E1)
          + 4 * sn
          + (1 - e2t) / (1 - E2)
          - tau * tail)
    f2 = ((-4 * e2t - tail * eps ** 2 * (1 - E2) * (tau + 2)) / (eps * (1 - E2))
          + 4 * e2t / (eps * (1 - E2))
          + 2 * (tau - 1) * tail
          + (2 - 2 * et) / (1 - E1)
          - 2 * sn
          + (4 - 4 * e2t) / (-1 + E2))
    return f1, f2


def linear_bvp_exact(eps: float, tau):
    """Closed-form ``(u, v)`` with first and second derivatives.

    Returns three arrays of shape ``(N, 2)``: values, first and second
    derivatives.
    """
    tau = np.atleast_1d(np.asarray(tau, dtype=float))
    pi = np.pi
    em1 = -np.expm1(-1.0 / eps)  # 1 - e^{-1/eps}
    em2 = -np.expm1(-2.0 / eps)
    et = np.exp(-tau / eps)
    e2t = np.exp(-2.0 * tau / eps)
    tail = np.exp(tau - 1.0)
    sn, cs = np.sin(pi * tau / 2), np.cos(pi * tau / 2)

    u = 2.0 * (_ratio(tau, 1.0, eps) - sn)
    du = 2.0 * (et / (eps * em1) - (pi / 2) * cs)
    ddu = 2.0 * (-et / (eps * eps * em1) + (pi / 2) ** 2 * sn)
    v = _ratio(tau, 2.0, eps) - tau * tail
    dv = 2.0 * e2t / (eps * em2) - (tau + 1.0) * tail
    ddv = -4.0 * e2t / (eps * eps * em2) - (tau + 2.0) * tail
    return (np.stack([u, v], axis=-1), np.stack([du, dv], axis=-1), np.stack([ddu, ddv], axis=-1))


def linear_bvp(eps: float) -> ProblemSpec:
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")

    def residual(tau, u, du, ddu):
        f1, f2 = linear_bvp_forcing(eps, tau)
        return (eps * ddu[0] + du[0] - 2.0 * u[0] + u[1] - f1,
                eps * ddu[1] + 2.0 * du[1] + u[0] - 4.0 * u[1] - f2)

    conds = tuple(BoundaryCondition(t, i, 0.0) for t in (0.0, 1.0) for i in (0, 1))
    return ProblemSpec(
        "linear-bvp", 2, 2, residual, conds, (float(eps), float(eps)), {"eps": eps}, ("u", "v"),
        exact=lambda tau: linear_bvp_exact(eps, tau), leading=(float(eps), float(eps)),
    )


def robertson_reduced(k2: float, k1: float = 4e-2, k3: float = 1.0) -> ProblemSpec:
    """Reduced Robertson kinetics in ``(y, z)`` with ``eps1 = k1/k2``, ``eps2 = k3/k2``."""
    if not (k1 > 0 and k2 > 0 and k3 > 0):
        raise DomainError(f"rate constants must be positive, got {(k1, k2, k3)}")
    e1, e2 = k1 / k2, k3 / k2
    r = e1 / e2

    def residual(tau, u, du, ddu):
        y, z = u
        return (r * du[0] - r * (1.0 - y - z) + (1.0 / e2) * y ** 2 + y * z,
                e1 * du[1] - y ** 2)

    def rhs(t, s):
        y, z = s
        return np.array([(1.0 - y - z) - y * y / e1 - y * z / r, y * y / e1])

    def jacobian(t, s):
        y, z = s
        return np.array([[-1.0 - 2.0 * y / e1 - z / r, -1.0 - y / r],
                         [2.0 * y / e1, 0.0]])

    return ProblemSpec(
        "robertson", 2, 1, residual,
        (BoundaryCondition(0.0, 0, 0.0), BoundaryCondition(0.0, 1, 0.0)),
        (r, e1), {"k1": k1, "k2": k2, "k3": k3, "eps1": e1, "eps2": e2}, ("y", "z"),
        rhs=rhs, jacobian=jacobian, leading=(r, e1),
        # y is O(1e-1) at k2=10 and O(1e-2) beyond; report it scaled like z
        scale_exponents=(1 if k2 <= 10 else 2, 0),
    )


def fitzhugh_nagumo(eps2: float, eps1: float = 1e-1, eps3: float = 1e-2) -> ProblemSpec:
    if not (eps1 > 0 and eps2 > 0 and eps3 > 0):
        raise DomainError(f"small parameters must be positive, got {(eps1, eps2, eps3)}")

    def residual(tau, u, du, ddu):
        v, z, w = u
        return (eps1 * du[0] - v + (1.0 / 3.0) * v ** 3 + z + w,
                eps2 * du[1] - v + 0.5 * z,
                eps3 * du[2] - v + w)

    def rhs(t, s):
        v, z, w = s
        return np.array([(v - v ** 3 / 3.0 - z - w) / eps1, (v - 0.5 * z) / eps2, (v - w) / eps3])

    def jacobian(t, s):
        v = s[0]
        return np.array([[(1.0 - v * v) / eps1, -1.0 / eps1, -1.0 / eps1],
                         [1.0 / eps2, -0.5 / eps2, 0.0],
                         [1.0 / eps3, 0.0, -1.0 / eps3]])

    return ProblemSpec(
        "fhn", 3, 1, residual,
        (BoundaryCondition(0.0, 0, 1.5), BoundaryCondition(0.0, 1, 0.0), BoundaryCondition(0.0, 2, 0.2)),
        (float(eps1), float(eps2), float(eps3)), {"eps1": eps1, "eps2": eps2, "eps3": eps3}, ("v", "z", "w"),
        rhs=rhs, jacobian=jacobian, leading=(float(eps1), float(eps2), float(eps3)),
    )


# name -> (factory, name of the parameter a curriculum walks, default value)
REGISTRY = {
    "mm-ivp": (michaelis_menten, "eps", 1e-2),
    "linear-bvp": (linear_bvp, "eps", 1e-1),
    "robertson": (robertson_reduced, "k2", 10.0),
    "fhn": (fitzhugh_nagumo, "eps2", 1e-2),
}


def make_problem(name: str, **params) -> ProblemSpec:
    """Build a catalog problem by registry name."""
    try:
        factory, key, default = REGISTRY[name]
    except KeyError:
        raise ConfigError(f"unknown problem {name!r}; choose from {sorted(REGISTRY)}") from None
    params.setdefault(key, default)
    return factory(**params)
