"""Catalog of conservative steady systems on a four dimensional phase space.

Two structural families are supported:

* the scalar fourth-order family  u'''' + sigma*u'' + V'(u) = 0  with a
  polynomial potential V (Swift-Hohenberg type equations and the steady
  reduction of NLS with quartic dispersion), phase point (u, u_x, u_xx, u_xxx);
* the coupled second-order Boussinesq system  c*h_xx = F_h, a*u_xx = F_u,
  phase point (h, u, h_x, u_x).

Every model carries its Hamiltonian and Lagrangian densities and its
(non-canonical) symplectic operator, so structural identities such as
J*f = grad(H) are directly testable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import polynomial as npoly

__all__ = [
    "SystemModel",
    "UnsupportedModel",
    "cubic_sh",
    "quadratic_cubic_sh",
    "gnlse_quadratic",
    "sh357",
    "nls4",
    "sh_custom",
    "boussinesq",
    "model_from_config",
    "rhs",
    "rhs_jacobian",
    "hamiltonian_value",
    "lagrangian_value",
    "symplectic_operator",
    "canonical_transform",
    "canonical_hamiltonian",
]


class UnsupportedModel(ValueError):
    """Requested operation is not defined for this model family."""


@dataclass(frozen=True)
class SystemModel:
    """Immutable description of one steady system.

    ``kind`` is either ``"sh"`` (scalar fourth order) or ``"boussinesq"``.
    For the SH family ``v_coeffs`` are the potential coefficients, lowest
    degree first, and ``params`` contains at least ``sigma``.
    """

    name: str
    kind: str
    params: dict = field(default_factory=dict)
    v_coeffs: tuple = ()

    phase_dim = 4

    def __post_init__(self):
        if self.kind not in ("sh", "boussinesq"):
            raise UnsupportedModel(f"unknown model kind {self.kind!r}")
        if self.kind == "sh" and "sigma" not in self.params:
            raise ValueError("SH-family model requires a 'sigma' parameter")

    # -- parameters ------------------------------------------------------

    @property
    def sigma(self) -> float:
        return float(self.params["sigma"])

    @property
    def n_fields(self) -> int:
        return 1 if self.kind == "sh" else 2

    def with_params(self, **updates) -> "SystemModel":
        """New model with some named parameters replaced.

        Potential coefficients that are functions of the named parameters
        (SH357, quadratic-cubic) are rebuilt.
        """
        params = dict(self.params)
        params.update(updates)
        builder = _FAMILIES.get(self.name)
        if builder is not None:
            return builder(**params)
        if self.kind == "sh":
            return SystemModel(self.name, "sh", params, self.v_coeffs)
        return SystemModel(self.name, "boussinesq", params)

    # -- SH potential ----------------------------------------------------

    def v(self, u, deriv: int = 0):
        """Potential V(u) or one of its derivatives (up to any order)."""
        if self.kind != "sh":
            raise UnsupportedModel("polynomial potential only for SH family")
        c = npoly.polyder(np.asarray(self.v_coeffs, float), deriv) if deriv else np.asarray(self.v_coeffs, float)
        return npoly.polyval(u, c) if c.size else np.zeros_like(np.asarray(u, float))

    # -- Boussinesq structure --------------------------------------------

    def f_nl(self, u, deriv: int = 0):
        """Flux nonlinearity f(u) = u^2/2 + alpha*u^3/3 and derivatives."""
        al = self.params["alpha"]
        u = np.asarray(u, float)
        if deriv == 0:
            return 0.5 * u**2 + al * u**3 / 3.0
        if deriv == 1:
            return u + al * u**2
        if deriv == 2:
            return 1.0 + 2.0 * al * u
        if deriv == 3:
            return 2.0 * al * np.ones_like(u)
        return np.zeros_like(u)

    def bigF(self, h, u):
        p = self.params
        return (p["A"] * u + p["B"] * h - 0.5 * p["g"] * h**2 - 0.5 * u**2
                - h * self.f_nl(u) + p["C"] * h * u)

    def bigF_h(self, h, u):
        p = self.params
        return p["B"] - p["g"] * h - self.f_nl(u) + p["C"] * u

    def bigF_u(self, h, u):
        p = self.params
        return p["A"] - u - h * self.f_nl(u, 1) + p["C"] * h

    def bigF_hess(self, h, u):
        """(F_hh, F_hu, F_uu) at (h, u)."""
        p = self.params
        f_hh = -p["g"] * np.ones_like(np.asarray(h, float))
        f_hu = -self.f_nl(u, 1) + p["C"]
        f_uu = -1.0 - h * self.f_nl(u, 2)
        return f_hh, f_hu, f_uu

    # -- phase space -----------------------------------------------------

    def rhs(self, p):
        p = np.asarray(p, float)
        if p.shape[-1] != 4:
            raise ValueError("phase point must have 4 components")
        if self.kind == "sh":
            return np.stack([p[..., 1], p[..., 2], p[..., 3],
                             -self.sigma * p[..., 2] - self.v(p[..., 0], 1)], axis=-1)
        a, c = self.params["a"], self.params["c"]
        h, u = p[..., 0], p[..., 1]
        return np.stack([p[..., 2], p[..., 3],
                         self.bigF_h(h, u) / c, self.bigF_u(h, u) / a], axis=-1)

    def rhs_jacobian(self, p):
        p = np.asarray(p, float)
        if self.kind == "sh":
            return np.array([
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [-float(self.v(p[0], 2)), 0.0, -self.sigma, 0.0],
            ])
        a, c = self.params["a"], self.params["c"]
        f_hh, f_hu, f_uu = self.bigF_hess(p[0], p[1])
        return np.array([
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [float(f_hh) / c, float(f_hu) / c, 0.0, 0.0],
            [float(f_hu) / a, float(f_uu) / a, 0.0, 0.0],
        ])

    def hamiltonian(self, p):
        p = np.asarray(p, float)
        if self.kind == "sh":
            return (p[..., 1] * p[..., 3] - 0.5 * p[..., 2]**2
                    + 0.5 * self.sigma * p[..., 1]**2 + self.v(p[..., 0]))
        a, c = self.params["a"], self.params["c"]
        return (0.5 * a * p[..., 3]**2 + 0.5 * c * p[..., 2]**2
                - self.bigF(p[..., 0], p[..., 1]))

    def lagrangian(self, p):
        p = np.asarray(p, float)
        if self.kind == "sh":
            return (p[..., 1] * p[..., 3] + 0.5 * p[..., 2]**2
                    + 0.5 * self.sigma * p[..., 1]**2 - self.v(p[..., 0]))
        a, c = self.params["a"], self.params["c"]
        return (0.5 * a * p[..., 3]**2 + 0.5 * c * p[..., 2]**2
                + self.bigF(p[..., 0], p[..., 1]))

    def symplectic_operator(self):
        if self.kind == "sh":
            s = self.sigma
            return np.array([
                [0.0, -s, 0.0, -1.0],
                [s, 0.0, 1.0, 0.0],
                [0.0, -1.0, 0.0, 0.0],
                [1.0, 0.0, 0.0, 0.0],
            ])
        # canonical form weighted by the dispersion coefficients, so that
        # J.rhs = grad(H) holds in the (h, u, h_x, u_x) ordering
        a, c = self.params["a"], self.params["c"]
        return np.array([
            [0.0, 0.0, -c, 0.0],
            [0.0, 0.0, 0.0, -a],
            [c, 0.0, 0.0, 0.0],
            [0.0, a, 0.0, 0.0],
        ])

    def canonical_transform(self):
        """Matrix T with T^T J_C T = J, mapping (u1..u4) to (q1,q2,p1,p2)."""
        if self.kind != "sh":
            raise UnsupportedModel("canonical transform defined for the SH family")
        s = self.sigma
        return np.array([
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, s, 0.0, 1.0],
            [0.0, 1.0, 0.0, 0.0],
        ])


CANONICAL_J = np.array([
    [0.0, 0.0, -1.0, 0.0],
    [0.0, 0.0, 0.0, -1.0],
    [1.0, 0.0, 0.0, 0.0],
    [0.0, 1.0, 0.0, 0.0],
])


def canonical_hamiltonian(model: SystemModel, qp):
    """H in canonical coordinates: p1 p2 - sigma p2^2/2 - q2^2/2 + V(q1)."""
    if model.kind != "sh":
        raise UnsupportedModel("canonical form defined for the SH family")
    q1, q2, p1, p2 = np.asarray(qp, float)
    return p1 * p2 - 0.5 * model.sigma * p2**2 - 0.5 * q2**2 + model.v(q1)


# -- catalog ---------------------------------------------------------------

def cubic_sh(sigma: float = 1.0) -> SystemModel:
    """u'''' + sigma u'' + u - u^3 = 0."""
    return SystemModel("cubic_sh", "sh", {"sigma": float(sigma)},
                       (0.0, 0.0, 0.5, 0.0, -0.25))


def quadratic_cubic_sh(nu: float, sigma: float = 1.0) -> SystemModel:
    """u'''' + sigma u'' + u + nu u^2 - u^3 = 0."""
    return SystemModel("quadratic_cubic_sh", "sh",
                       {"sigma": float(sigma), "nu": float(nu)},
                       (0.0, 0.0, 0.5, float(nu) / 3.0, -0.25))


def gnlse_quadratic() -> SystemModel:
    """u'''' + u'' + u + u^2 - u^3 = 0 (broken u -> -u symmetry)."""
    return SystemModel("gnlse_quadratic", "sh", {"sigma": 1.0},
                       (0.0, 0.0, 0.5, 1.0 / 3.0, -0.25))


def sh357(mu: float, a: float, b: float) -> SystemModel:
    """u'''' + 2u'' + (1-mu)u + a u^3 - b u^5 + u^7 = 0."""
    return SystemModel("sh357", "sh",
                       {"sigma": 2.0, "mu": float(mu), "a": float(a), "b": float(b)},
                       (0.0, 0.0, 0.5 * (1.0 - mu), 0.0, 0.25 * a, 0.0,
                        -b / 6.0, 0.0, 0.125))


def nls4(beta2: float) -> SystemModel:
    """Quartic-dispersion NLS in its steady scalar reduction.

    After rescaling x the stationary profile solves the cubic SH equation
    with sigma = beta2 * sqrt(6).
    """
    m = cubic_sh(sigma=float(beta2) * math.sqrt(6.0))
    return SystemModel("nls4", "sh", {"sigma": m.sigma, "beta2": float(beta2)},
                       m.v_coeffs)


def sh_custom(sigma: float, v_coeffs, name: str = "sh_custom") -> SystemModel:
    """SH-family model with a user supplied polynomial potential."""
    return SystemModel(name, "sh", {"sigma": float(sigma)},
                       tuple(float(c) for c in v_coeffs))


def boussinesq(a: float, c: float, alpha: float, A: float = -2.0,
               B: float = 2.0, C: float = 0.0, g: float = 1.0) -> SystemModel:
    """Steady coupled system c h_xx = F_h, a u_xx = F_u."""
    return SystemModel("boussinesq", "boussinesq",
                       {"a": float(a), "c": float(c), "alpha": float(alpha),
                        "A": float(A), "B": float(B), "C": float(C),
                        "g": float(g)})


_FAMILIES = {
    "cubic_sh": cubic_sh,
    "quadratic_cubic_sh": quadratic_cubic_sh,
    "gnlse_quadratic": lambda **kw: gnlse_quadratic(),
    "sh357": lambda sigma=2.0, **kw: sh357(**{k: v for k, v in kw.items() if k in ("mu", "a", "b")}),
    "nls4": lambda sigma=None, **kw: nls4(kw["beta2"]),
    "boussinesq": boussinesq,
}


def model_from_config(cfg: dict) -> SystemModel:
    """Build a model from a parsed config mapping.

    Expected keys: ``name`` plus named parameters under ``params``; a custom
    potential is given as ``v_coeffs`` (lowest degree first).
    """
    name = cfg["name"]
    params = dict(cfg.get("params", {}))
    if name == "sh_custom":
        return sh_custom(params.pop("sigma"), cfg["v_coeffs"])
    if name not in _FAMILIES:
        raise UnsupportedModel(f"unknown model name {name!r}")
    return _FAMILIES[name](**params)


# -- module-level operation aliases ---------------------------------------

def rhs(model: SystemModel, p):
    return model.rhs(p)


def rhs_jacobian(model: SystemModel, p):
    return model.rhs_jacobian(p)


def hamiltonian_value(model: SystemModel, p):
    return model.hamiltonian(p)


def lagrangian_value(model: SystemModel, p):
    return model.lagrangian(p)


def symplectic_operator(model: SystemModel):
    return model.symplectic_operator()


def canonical_transform(model: SystemModel):
    return model.canonical_transform()
