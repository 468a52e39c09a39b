"""Periodic orbits by Fourier collocation, their continuation, and the
linear systems for the wavenumber derivatives of the profile.

A profile u(z) on the 2*pi grid solves, for the SH family,

    k^4 u_zzzz + sigma k^2 u_zz + V'(u) + c u_z = 0,

with the drift multiplier c balanced by the phase condition
<u_old_z, u - u_old> = 0; c vanishes on genuine solutions.  The Boussinesq
system is handled with a two-field profile (h, u) and a shared drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import SystemModel
from .numerics import (NonConvergence, PeriodicGrid, SingularSystem,
                       ToolkitError, diff_matrix, fourier_derivative,
                       newton_bordered, trig_interp)

__all__ = [
    "PeriodicOrbit", "Branch", "BranchPoint", "DegenerateOrbit",
    "solve_periodic", "solve_periodic_h", "continue_branch",
    "k_derivatives", "orbit_at", "normalize_phase", "constant_orbit",
]


class DegenerateOrbit(ToolkitError):
    """A nontrivial guess collapsed onto a constant state."""


@dataclass
class PeriodicOrbit:
    """Collocation representation of a 2*pi-periodic profile u(z, k)."""

    model: SystemModel
    k: float
    profile: np.ndarray          # (n_fields, n) grid values
    drift: float
    reference: np.ndarray        # profile defining the phase condition

    def __post_init__(self):
        self.profile = np.atleast_2d(np.asarray(self.profile, float))
        self.reference = np.atleast_2d(np.asarray(self.reference, float))
        self._derivs = {}

    @property
    def n(self) -> int:
        return self.profile.shape[1]

    @property
    def n_fields(self) -> int:
        return self.profile.shape[0]

    @property
    def nodes(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n) / self.n

    @property
    def period(self) -> float:
        return 2.0 * np.pi / self.k

    def zderiv(self, order: int, fld: int = 0) -> np.ndarray:
        """Cached spectral z-derivative of one profile field."""
        key = (order, fld)
        if key not in self._derivs:
            self._derivs[key] = (self.profile[fld].copy() if order == 0
                                 else fourier_derivative(self.profile[fld], order))
        return self._derivs[key]

    def grids(self):
        return [PeriodicGrid(f) for f in self.profile]

    # -- phase-space embedding ------------------------------------------

    def grid_states(self) -> np.ndarray:
        """Phase points over the grid, shape (n, 4)."""
        k = self.k
        if self.model.kind == "sh":
            return np.stack([self.zderiv(0), k * self.zderiv(1),
                             k**2 * self.zderiv(2), k**3 * self.zderiv(3)], axis=-1)
        return np.stack([self.zderiv(0, 0), self.zderiv(0, 1),
                         k * self.zderiv(1, 0), k * self.zderiv(1, 1)], axis=-1)

    def embed(self, theta):
        """Phase point(s) on the orbit at phase z = theta."""
        k = self.k
        scalar = np.ndim(theta) == 0
        if self.model.kind == "sh":
            comps = [trig_interp(self.zderiv(j), theta) * k**j for j in range(4)]
        else:
            comps = [trig_interp(self.zderiv(0, 0), theta),
                     trig_interp(self.zderiv(0, 1), theta),
                     k * trig_interp(self.zderiv(1, 0), theta),
                     k * trig_interp(self.zderiv(1, 1), theta)]
        out = np.stack(comps, axis=-1)
        return out[0] if scalar else out

    def hamiltonian_profile(self) -> np.ndarray:
        return self.model.hamiltonian(self.grid_states())

    def hamiltonian(self) -> float:
        return float(np.mean(self.hamiltonian_profile()))

    def profile_variance(self) -> float:
        return float(max(np.var(f) for f in self.profile))

    def translate(self, dz: float) -> "PeriodicOrbit":
        """Orbit with profile and reference shifted, u_new(z) = u(z + dz)."""
        def shift(fields):
            n = fields.shape[1]
            m = np.fft.rfftfreq(n, d=1.0 / n)
            return np.fft.irfft(np.fft.rfft(fields, axis=-1)
                                * np.exp(1j * m * dz), n, axis=-1)
        return PeriodicOrbit(self.model, self.k, shift(self.profile),
                             self.drift, shift(self.reference))

    def resample(self, n_new: int) -> "PeriodicOrbit":
        def pad(fields):
            return np.stack([_resample(f, n_new) for f in fields])
        return PeriodicOrbit(self.model, self.k, pad(self.profile),
                             self.drift, pad(self.reference))

    def residual_sup(self, n_check: int | None = None) -> float:
        """Sup norm of the steady-equation residual, optionally on a finer grid."""
        orb = self if n_check in (None, self.n) else self.resample(n_check)
        r = _equation_residual(orb.model, orb.k, orb.profile, orb.drift)
        return float(np.max(np.abs(r)))


def _resample(values: np.ndarray, n_new: int) -> np.ndarray:
    n = values.size
    c = np.fft.rfft(values)
    c_new = np.zeros(n_new // 2 + 1, complex)
    m = min(c.size, c_new.size)
    c_new[:m] = c[:m]
    if n_new > n and n % 2 == 0:
        c_new[n // 2] *= 0.5  # split the Nyquist coefficient
    return np.fft.irfft(c_new * (n_new / n), n_new)


# -- residual / Jacobian assembly -------------------------------------------

def _equation_residual(model, k, fields, c):
    """Steady-equation residual per field, without the phase row."""
    if model.kind == "sh":
        u = fields[0]
        r = (k**4 * fourier_derivative(u, 4) + model.sigma * k**2 * fourier_derivative(u, 2)
             + model.v(u, 1) + c * fourier_derivative(u, 1))
        return r[None, :]
    a, cc = model.params["a"], model.params["c"]
    h, u = fields
    rh = cc * k**2 * fourier_derivative(h, 2) - model.bigF_h(h, u) + c * fourier_derivative(h, 1)
    ru = a * k**2 * fourier_derivative(u, 2) - model.bigF_u(h, u) + c * fourier_derivative(u, 1)
    return np.stack([rh, ru])


def _linearization(model, k, fields, c=0.0):
    """Dense matrix of the steady equation linearized about the profile."""
    n = fields.shape[1]
    D1, D2 = diff_matrix(n, 1), diff_matrix(n, 2)
    if model.kind == "sh":
        D4 = diff_matrix(n, 4)
        u = fields[0]
        return (k**4 * D4 + model.sigma * k**2 * D2 + np.diag(model.v(u, 2))
                + c * D1)
    a, cc = model.params["a"], model.params["c"]
    h, u = fields
    f_hh, f_hu, f_uu = model.bigF_hess(h, u)
    Z = np.zeros((n, n))
    top = np.hstack([cc * k**2 * D2 - np.diag(f_hh) + c * D1, -np.diag(f_hu)])
    bot = np.hstack([-np.diag(f_hu), a * k**2 * D2 - np.diag(f_uu) + c * D1])
    return np.vstack([top, bot])


def _k_column(model, k, fields, c):
    """Derivative of the equation residual with respect to k."""
    if model.kind == "sh":
        u = fields[0]
        col = 4 * k**3 * fourier_derivative(u, 4) + 2 * model.sigma * k * fourier_derivative(u, 2)
        return col
    a, cc = model.params["a"], model.params["c"]
    h, u = fields
    return np.concatenate([2 * cc * k * fourier_derivative(h, 2),
                           2 * a * k * fourier_derivative(u, 2)])


def _phase_row(reference):
    """Row vector of the phase condition <ref_z, .> (mean quadrature)."""
    n = reference.shape[1]
    refz = np.stack([fourier_derivative(f, 1) for f in reference])
    return refz.ravel() / n, refz


def _hbar_and_grad(model, k, fields):
    """Mean of the pointwise Hamiltonian and its gradient in (fields, k)."""
    n = fields.shape[1]
    if model.kind == "sh":
        u = fields[0]
        u1, u2, u3 = (fourier_derivative(u, j) for j in (1, 2, 3))
        hbar = float(np.mean(k**4 * u1 * u3 - 0.5 * k**4 * u2**2
                             + 0.5 * model.sigma * k**2 * u1**2 + model.v(u)))
        D1, D2, D3 = diff_matrix(n, 1), diff_matrix(n, 2), diff_matrix(n, 3)
        grad_u = (k**4 * (D1.T @ u3 + D3.T @ u1) - k**4 * (D2.T @ u2)
                  + model.sigma * k**2 * (D1.T @ u1) + model.v(u, 1)) / n
        dk = float(np.mean(4 * k**3 * u1 * u3 - 2 * k**3 * u2**2
                           + model.sigma * k * u1**2))
        return hbar, grad_u, dk
    a, cc = model.params["a"], model.params["c"]
    h, u = fields
    h1 = fourier_derivative(h, 1)
    u1 = fourier_derivative(u, 1)
    hbar = float(np.mean(0.5 * a * k**2 * u1**2 + 0.5 * cc * k**2 * h1**2
                         - model.bigF(h, u)))
    D1 = diff_matrix(n, 1)
    grad_h = (cc * k**2 * (D1.T @ h1) - model.bigF_h(h, u)) / n
    grad_u = (a * k**2 * (D1.T @ u1) - model.bigF_u(h, u)) / n
    dk = float(np.mean(a * k * u1**2 + cc * k * h1**2))
    return hbar, np.concatenate([grad_h, grad_u]), dk


def _coerce_fields(model, guess):
    if isinstance(guess, PeriodicOrbit):
        return guess.profile.copy()
    if isinstance(guess, PeriodicGrid):
        arr = guess.values[None, :]
    else:
        arr = np.atleast_2d(np.asarray(guess, float))
    if arr.shape[0] != model.n_fields:
        raise ValueError(f"model needs {model.n_fields} profile field(s)")
    return arr.copy()


def _tail_fraction(fields) -> float:
    frac = 0.0
    for f in fields:
        c = np.abs(np.fft.rfft(f))**2
        total = np.sum(c[1:])
        if total == 0:
            continue
        frac = max(frac, np.sum(c[c.size // 2:]) / total)
    return frac


def solve_periodic(model: SystemModel, k: float, guess, reference=None,
                   tol: float = 1e-9, max_iter: int = 25,
                   auto_refine: bool = True, n_max: int = 256) -> PeriodicOrbit:
    """Newton-solve the collocation system at fixed wavenumber k.

    ``guess`` may be a grid array, a ``PeriodicGrid`` or another orbit.  The
    phase condition is taken against ``reference`` (default: the guess); a
    constant reference pins the drift to zero instead.  The grid is doubled
    automatically while the Fourier tail carries more than 1e-10 of the
    profile energy.
    """
    if k <= 0:
        raise ValueError("wavenumber must be positive")
    fields = _coerce_fields(model, guess)
    ref = _coerce_fields(model, reference) if reference is not None else fields.copy()
    if ref.shape != fields.shape:
        raise ValueError("reference and guess grids differ")
    guess_constant = float(max(np.var(f) for f in fields)) < 1e-12

    while True:
        orbit = _solve_fixed_grid(model, k, fields, ref, tol, max_iter)
        if not auto_refine or orbit.n >= n_max or _tail_fraction(orbit.profile) <= 1e-10:
            break
        n_new = 2 * orbit.n
        fields = np.stack([_resample(f, n_new) for f in orbit.profile])
        ref = np.stack([_resample(f, n_new) for f in ref])

    if orbit.profile_variance() < 1e-12 and not guess_constant:
        raise DegenerateOrbit("profile collapsed to a constant state")
    return orbit


def _solve_fixed_grid(model, k, fields, ref, tol, max_iter):
    m, n = fields.shape
    prow, refz = _phase_row(ref)
    pinned = float(np.max(np.abs(refz))) < 1e-12   # constant reference: pin c = 0
    ref_flat = ref.ravel()

    def unpack(vec):
        return vec[:m * n].reshape(m, n), vec[m * n]

    def residual(vec):
        flds, c = unpack(vec)
        r = _equation_residual(model, k, flds, c).ravel()
        ph = c if pinned else prow @ (vec[:m * n] - ref_flat)
        return np.concatenate([r, [ph]])

    def jacobian(vec):
        flds, c = unpack(vec)
        n1 = m * n
        J = np.zeros((n1 + 1, n1 + 1))
        J[:n1, :n1] = _linearization(model, k, flds, c)
        drift_col = np.stack([fourier_derivative(f, 1) for f in flds]).ravel()
        J[:n1, n1] = drift_col
        if pinned:
            J[n1, n1] = 1.0
        else:
            J[n1, :n1] = prow
        return J

    vec0 = np.concatenate([fields.ravel(), [0.0]])
    res = newton_bordered(residual, vec0, tol=tol, max_iter=max_iter, jac=jacobian)
    flds, c = unpack(res.x)
    return PeriodicOrbit(model, k, flds, float(c), ref.copy())


def constant_orbit(model: SystemModel, k: float, values, n: int = 64) -> PeriodicOrbit:
    """Equilibrium embedded as a degenerate periodic orbit."""
    vals = np.atleast_1d(np.asarray(values, float))
    fields = np.repeat(vals[:, None], n, axis=1)
    return solve_periodic(model, k, fields, auto_refine=False)


def solve_periodic_h(model: SystemModel, guess, h_target: float,
                     reference=None, tol: float = 1e-9,
                     max_iter: int = 30) -> PeriodicOrbit:
    """Solve with the Hamiltonian level pinned and the wavenumber free.

    ``guess`` must be a ``PeriodicOrbit`` providing the starting wavenumber.
    """
    if not isinstance(guess, PeriodicOrbit):
        raise TypeError("H-level solve needs a PeriodicOrbit starting point")
    fields0, k0 = guess.profile.copy(), guess.k
    ref = _coerce_fields(model, reference) if reference is not None else guess.reference.copy()
    m, n = fields0.shape
    prow, _ = _phase_row(ref)
    ref_flat = ref.ravel()

    def unpack(vec):
        return vec[:m * n].reshape(m, n), vec[m * n], vec[m * n + 1]

    def residual(vec):
        flds, c, k = unpack(vec)
        r = _equation_residual(model, k, flds, c).ravel()
        ph = prow @ (vec[:m * n] - ref_flat)
        hbar, _, _ = _hbar_and_grad(model, k, flds)
        return np.concatenate([r, [ph, hbar - h_target]])

    def jacobian(vec):
        flds, c, k = unpack(vec)
        n1 = m * n
        J = np.zeros((n1 + 2, n1 + 2))
        J[:n1, :n1] = _linearization(model, k, flds, c)
        J[:n1, n1] = np.stack([fourier_derivative(f, 1) for f in flds]).ravel()
        J[:n1, n1 + 1] = _k_column(model, k, flds, c)
        J[n1, :n1] = prow
        hbar, gh, dk = _hbar_and_grad(model, k, flds)
        J[n1 + 1, :n1] = gh
        J[n1 + 1, n1 + 1] = dk
        return J

    vec0 = np.concatenate([fields0.ravel(), [guess.drift, k0]])
    res = newton_bordered(residual, vec0, tol=tol, max_iter=max_iter, jac=jacobian)
    flds, c, k = unpack(res.x)
    if k <= 0:
        raise NonConvergence("H-level solve left the k > 0 domain")
    return PeriodicOrbit(model, float(k), flds, float(c), ref.copy())


# -- wavenumber derivatives of the profile -----------------------------------

def _bordered_solve(M, kernel, rhs_list, n):
    """Solve M x = rhs with the kernel direction bordered out.

    Returns solutions orthogonal to the kernel under the mean inner product,
    together with the solvability multipliers.
    """
    from scipy.linalg import lu_factor, lu_solve
    dim = M.shape[0]
    B = np.zeros((dim + 1, dim + 1))
    B[:dim, :dim] = M
    B[:dim, dim] = kernel
    B[dim, :dim] = kernel / n
    lu_piv = lu_factor(B)
    sols, mults = [], []
    for rhs in rhs_list:
        xb = lu_solve(lu_piv, np.concatenate([rhs, [0.0]]))
        sols.append(xb[:dim])
        mults.append(float(xb[dim]))
    return sols, mults


def k_derivatives(orbit: PeriodicOrbit, order: int = 3):
    """Profiles u_k, u_kk, u_kkk from the extended linear systems.

    Each level is solved with the translation direction bordered out, i.e.
    <u_z, u_k...> = 0.  Returns a list of (n_fields, n) arrays of length
    ``order``.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2, or 3")
    model, k = orbit.model, orbit.k
    m, n = orbit.profile.shape
    M = _linearization(model, k, orbit.profile, orbit.drift)
    kernel = np.stack([fourier_derivative(f, 1) for f in orbit.profile]).ravel()

    def dz(arr, p):
        return fourier_derivative(arr, p)

    out = []
    if model.kind == "sh":
        u = orbit.profile[0]
        sigma = model.sigma
        u2, u4 = dz(u, 2), dz(u, 4)

        def lp(v):     # L'(k) v
            return 4 * k**3 * dz(v, 4) + 2 * sigma * k * dz(v, 2)

        def lpp(v):    # L''(k) v
            return 12 * k**2 * dz(v, 4) + 2 * sigma * dz(v, 2)

        rhs1 = -(4 * k**3 * u4 + 2 * sigma * k * u2)
        (uk,), _ = _bordered_solve(M, kernel, [rhs1], n)
        out.append(uk[None, :])
        if order >= 2:
            rhs2 = -(2 * lp(uk) + lpp(u) + model.v(u, 3) * uk**2)
            (ukk,), _ = _bordered_solve(M, kernel, [rhs2], n)
            out.append(ukk[None, :])
        if order >= 3:
            rhs3 = -(3 * lp(ukk) + 3 * lpp(uk) + 24 * k * u4
                     + model.v(u, 4) * uk**3 + 3 * model.v(u, 3) * uk * ukk)
            (ukkk,), _ = _bordered_solve(M, kernel, [rhs3], n)
            out.append(ukkk[None, :])
        return out

    a, cc = model.params["a"], model.params["c"]
    h, u = orbit.profile
    f2 = model.f_nl(u, 2)
    f3 = model.f_nl(u, 3)
    rhs1 = -np.concatenate([2 * cc * k * dz(h, 2), 2 * a * k * dz(u, 2)])
    (v1,), _ = _bordered_solve(M, kernel, [rhs1], n)
    hk, uk = v1.reshape(2, n)
    out.append(v1.reshape(2, n))
    if order >= 2:
        rhs2 = -np.concatenate([
            4 * cc * k * dz(hk, 2) + 2 * cc * dz(h, 2) + f2 * uk**2,
            4 * a * k * dz(uk, 2) + 2 * a * dz(u, 2) + 2 * f2 * hk * uk + h * f3 * uk**2,
        ])
        (v2,), _ = _bordered_solve(M, kernel, [rhs2], n)
        hkk, ukk = v2.reshape(2, n)
        out.append(v2.reshape(2, n))
    if order >= 3:
        rhs3 = -np.concatenate([
            6 * cc * k * dz(hkk, 2) + 6 * cc * dz(hk, 2)
            + f3 * uk**3 + 3 * f2 * uk * ukk,
            6 * a * k * dz(ukk, 2) + 6 * a * dz(uk, 2)
            + 3 * f3 * hk * uk**2 + 3 * f2 * (hk * ukk + hkk * uk)
            + 3 * h * f3 * uk * ukk,
        ])
        (v3,), _ = _bordered_solve(M, kernel, [rhs3], n)
        out.append(v3.reshape(2, n))
    return out


def orbit_at(orbit: PeriodicOrbit, k: float | None = None,
             model: SystemModel | None = None, tol: float = 1e-9) -> PeriodicOrbit:
    """Re-solve a nearby orbit, keeping the same phase reference.

    Used for phase-aligned finite differences in k or in model parameters.
    """
    mdl = model if model is not None else orbit.model
    kk = orbit.k if k is None else k
    fields = orbit.profile.copy()
    orb = _solve_fixed_grid(mdl, kk, fields, orbit.reference.copy(), tol, 25)
    return orb


def normalize_phase(orbit: PeriodicOrbit) -> PeriodicOrbit:
    """Shift the profile so the first field peaks at z = 0."""
    f = orbit.profile[0]
    if np.var(f) < 1e-14:
        return orbit
    zs = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    vals = trig_interp(f, zs)
    z0 = zs[int(np.argmax(vals))]
    d1 = fourier_derivative(f, 1)
    d2 = fourier_derivative(f, 2)
    for _ in range(40):
        g = float(trig_interp(d1, z0))
        gg = float(trig_interp(d2, z0))
        if gg == 0.0:
            break
        step = g / gg
        z0 -= step
        if abs(step) < 1e-14:
            break
    return orbit.translate(float(z0))


# -- branches ----------------------------------------------------------------

@dataclass
class BranchPoint:
    orbit: PeriodicOrbit
    param: float
    s: float
    A: float = np.nan
    H: float = np.nan
    A_k: float = np.nan
    multipliers: np.ndarray | None = None
    floquet_class: str = ""


@dataclass
class Branch:
    parameter: str
    points: list

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(p, name) for p in self.points])

    @property
    def params(self) -> np.ndarray:
        return self.column("param")

    def __len__(self):
        return len(self.points)

    def crossings(self, name: str, value: float = 0.0):
        """Indices i where the named column crosses the value between i, i+1."""
        col = self.column(name) - value
        idx = []
        for i in range(len(col) - 1):
            if np.isfinite(col[i]) and np.isfinite(col[i + 1]) and col[i] * col[i + 1] < 0:
                idx.append(i)
        return idx


def _record_point(orbit, pval, s, with_floquet, with_ak):
    from . import diagnostics as diag
    A = diag.action_of_orbit(orbit)
    H = orbit.hamiltonian()
    A_k = np.nan
    if with_ak:
        derivs = k_derivatives(orbit, 1)
        A_k = diag.action_derivatives(orbit, derivs)[0]
    mults, cls = None, ""
    if with_floquet:
        fl = diag.floquet(orbit)
        mults, cls = fl.multipliers, fl.floquet_class
    return BranchPoint(orbit, pval, s, A, H, A_k, mults, cls)


def continue_branch(model: SystemModel, seed: PeriodicOrbit, parameter: str,
                    prange, step: float, max_points: int = 200,
                    with_floquet: bool = True, with_ak: bool = True,
                    tol: float = 1e-9) -> Branch:
    """Pseudo-arclength continuation of an orbit family.

    ``parameter`` is ``"k"`` or the name of a model parameter.  The signed
    ``step`` fixes the initial direction; continuation stops at the range
    boundary (final point clipped onto it), at ``max_points``, or on step
    collapse below 1e-8.
    """
    lo, hi = min(prange), max(prange)
    is_k = parameter == "k"

    def make_model(pval):
        return model if is_k else model.with_params(**{parameter: float(pval)})

    m, n = seed.profile.shape
    scale = np.concatenate([np.full(m * n, 1.0 / np.sqrt(m * n)), [1.0], [1.0]])

    def pack(orb, pval):
        return np.concatenate([orb.profile.ravel(), [orb.drift], [pval]])

    def to_orbit(vec, ref):
        pval = vec[-1]
        flds = vec[:m * n].reshape(m, n)
        kv = pval if is_k else seed.k
        return PeriodicOrbit(make_model(pval), float(kv), flds, float(vec[m * n]), ref)

    def sys_residual(vec, ref, prow, ref_flat):
        pval = vec[-1]
        mdl = make_model(pval)
        kv = pval if is_k else seed.k
        flds = vec[:m * n].reshape(m, n)
        r = _equation_residual(mdl, kv, flds, vec[m * n]).ravel()
        ph = prow @ (vec[:m * n] - ref_flat)
        return np.concatenate([r, [ph]])

    # first point: make sure the seed is converged
    ref = seed.reference.copy()
    prow, _ = _phase_row(ref)
    first = _solve_fixed_grid(make_model(seed.k if is_k else model.params[parameter]),
                              seed.k, seed.profile.copy(), ref, tol, 25)
    p0 = first.k if is_k else float(model.params[parameter])
    points = [_record_point(first, p0, 0.0, with_floquet, with_ak)]
    y_prev = pack(first, p0)

    # second point by a natural step, retrying with smaller steps if needed
    h0 = step
    orb1 = None
    while abs(h0) >= 1e-8:
        p1 = float(np.clip(p0 + h0, lo, hi))
        try:
            orb1 = _solve_fixed_grid(make_model(p1), p1 if is_k else first.k,
                                     first.profile.copy(), ref, tol, 25)
            break
        except (NonConvergence, SingularSystem):
            h0 *= 0.5
    if orb1 is None:
        return Branch(parameter, points)
    ds = float(np.linalg.norm((pack(orb1, p1) - y_prev) * scale))
    points.append(_record_point(orb1, p1, ds, with_floquet, with_ak))
    y_curr = pack(orb1, p1)
    ref_curr = orb1.profile.copy()
    h = abs(step)
    s_acc = ds

    while len(points) < max_points:
        tan = (y_curr - y_prev) * scale
        nt = np.linalg.norm(tan)
        if nt == 0:
            break
        tan /= nt
        prow_c, _ = _phase_row(ref_curr)
        ref_flat_c = ref_curr.ravel()

        def ext_residual(vec):
            base = sys_residual(vec, ref_curr, prow_c, ref_flat_c)
            arc = tan @ ((vec - y_pred) * scale)
            return np.concatenate([base, [arc]])

        accepted = False
        while h >= 1e-8:
            y_pred = y_curr + h * tan / scale
            try:
                res = newton_bordered(ext_residual, y_pred, tol=tol, max_iter=12)
                accepted = True
                break
            except (NonConvergence, SingularSystem):
                h *= 0.5
        if not accepted:
            break
        y_new = res.x
        pval = float(y_new[-1])
        orb = to_orbit(y_new, ref_curr.copy())
        s_acc += float(np.linalg.norm((y_new - y_curr) * scale))
        if pval < lo - 1e-12 or pval > hi + 1e-12:
            # clip the last point onto the boundary with a natural solve
            pb = lo if pval < lo else hi
            try:
                orb_b = _solve_fixed_grid(make_model(pb), pb if is_k else orb.k,
                                          orb.profile.copy(), ref_curr, tol, 25)
                points.append(_record_point(orb_b, pb, s_acc,
                                            with_floquet, with_ak))
            except (NonConvergence, SingularSystem):
                pass
            break
        points.append(_record_point(orb, pval, s_acc,
                                    with_floquet, with_ak))
        y_prev, y_curr = y_curr, y_new
        ref_curr = orb.profile.copy()
        h = min(h * 1.3, abs(step) * 4)

    return Branch(parameter, points)
