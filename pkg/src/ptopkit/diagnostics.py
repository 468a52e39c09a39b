"""Action, Hamiltonian, Floquet, Bloch and Jordan-chain diagnostics of
periodic orbits.

The action of a wavetrain family is, for the scalar fourth-order family,

    A(k) = <sigma k u_z^2 - 2 k^3 u_zz^2>,      <f> = mean over one period,

and A(k) = k <a u_z^2 + c h_z^2> for the Boussinesq system.  Its first three
k-derivatives are evaluated from the profile derivatives u_k, u_kk, u_kkk by
differentiating these quadratic forms, which reproduces the closed
integrand formulas term by term.  The dispersive coefficient K of the
wavenumber modulation equation is computed two independent ways (quartic
Bloch fit, Jordan-chain termination) and cross-checked against the third
action derivative through the modulation coefficient kappa (2 kappa = A_kkk
at a codimension-two point).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .model import SystemModel, UnsupportedModel
from .numerics import ToolkitError, fourier_derivative
from .orbit import (PeriodicOrbit, _bordered_solve, _linearization,
                    k_derivatives, orbit_at)

__all__ = [
    "OrbitDiagnostics", "FloquetData", "JordanChain",
    "inner", "action_of_orbit", "averaged_lagrangian", "action_derivatives",
    "action_jump", "floquet", "bloch_eigenvalue", "bloch_mu2",
    "kappa_from_bloch", "jordan_chain", "kappa_from_chain",
    "modulation_kappa", "diagnose", "hk_finite_difference",
]


def inner(a, b) -> float:
    """Mean inner product (1/2pi) integral of a*b over the period."""
    return float(np.mean(np.asarray(a) * np.asarray(b)))


# -- action and averaged Lagrangian ------------------------------------------

def action_of_orbit(orbit: PeriodicOrbit) -> float:
    k, model = orbit.k, orbit.model
    if model.kind == "sh":
        uz, uzz = orbit.zderiv(1), orbit.zderiv(2)
        return model.sigma * k * inner(uz, uz) - 2.0 * k**3 * inner(uzz, uzz)
    a, c = model.params["a"], model.params["c"]
    hz, uz = orbit.zderiv(1, 0), orbit.zderiv(1, 1)
    return k * (a * inner(uz, uz) + c * inner(hz, hz))


def averaged_lagrangian(orbit: PeriodicOrbit) -> float:
    k, model = orbit.k, orbit.model
    if model.kind == "sh":
        u, uz, uzz, uzzz = (orbit.zderiv(j) for j in range(4))
        return float(np.mean(k**4 * uz * uzzz + 0.5 * k**4 * uzz**2
                             + 0.5 * model.sigma * k**2 * uz**2 - model.v(u)))
    a, c = model.params["a"], model.params["c"]
    h, u = orbit.profile
    hz, uz = orbit.zderiv(1, 0), orbit.zderiv(1, 1)
    return float(np.mean(0.5 * a * k**2 * uz**2 + 0.5 * c * k**2 * hz**2
                         + model.bigF(h, u)))


def action_derivatives(orbit: PeriodicOrbit, derivs) -> tuple:
    """(A_k, ..) from the closed quadratic-form integrands.

    ``derivs`` is the list produced by ``orbit.k_derivatives``; as many
    derivatives are returned as profiles are supplied (up to three).
    """
    k, model = orbit.k, orbit.model
    order = len(derivs)

    def dseq(fld, zorder):
        seq = [orbit.zderiv(zorder, fld)]
        for d in derivs:
            seq.append(fourier_derivative(d[fld], zorder))
        return seq

    def quad_derivs(seq):
        """k-derivatives of <f, f> given f, f_k, f_kk, f_kkk."""
        out = [inner(seq[0], seq[0])]
        if order >= 1:
            out.append(2 * inner(seq[0], seq[1]))
        if order >= 2:
            out.append(2 * (inner(seq[1], seq[1]) + inner(seq[0], seq[2])))
        if order >= 3:
            out.append(2 * (3 * inner(seq[1], seq[2]) + inner(seq[0], seq[3])))
        return out

    if model.kind == "sh":
        sigma = model.sigma
        P = quad_derivs(dseq(0, 1))     # <u_z, u_z> and its k-derivatives
        R = quad_derivs(dseq(0, 2))     # <u_zz, u_zz> and its k-derivatives
        res = []
        if order >= 1:
            res.append(sigma * (P[0] + k * P[1]) - 2 * (3 * k**2 * R[0] + k**3 * R[1]))
        if order >= 2:
            res.append(sigma * (2 * P[1] + k * P[2])
                       - 2 * (6 * k * R[0] + 6 * k**2 * R[1] + k**3 * R[2]))
        if order >= 3:
            res.append(sigma * (3 * P[2] + k * P[3])
                       - 2 * (6 * R[0] + 18 * k * R[1] + 9 * k**2 * R[2] + k**3 * R[3]))
        return tuple(res)

    a, c = model.params["a"], model.params["c"]
    Sh = quad_derivs(dseq(0, 1))
    Su = quad_derivs(dseq(1, 1))
    S = [c * sh + a * su for sh, su in zip(Sh, Su)]
    res = []
    if order >= 1:
        res.append(S[0] + k * S[1])
    if order >= 2:
        res.append(2 * S[1] + k * S[2])
    if order >= 3:
        res.append(3 * S[2] + k * S[3])
    return tuple(res)


def action_jump(orbit_minus: PeriodicOrbit, orbit_plus: PeriodicOrbit) -> float:
    """Jump A(k+) - A(k-) carried by a connection."""
    return action_of_orbit(orbit_plus) - action_of_orbit(orbit_minus)


def hk_finite_difference(ks, values) -> np.ndarray:
    """Centered first differences on a non-uniform grid (NaN at the ends)."""
    ks = np.asarray(ks, float)
    v = np.asarray(values, float)
    out = np.full_like(v, np.nan)
    hl = ks[1:-1] - ks[:-2]
    hr = ks[2:] - ks[1:-1]
    out[1:-1] = (hl**2 * v[2:] - hr**2 * v[:-2] + (hr**2 - hl**2) * v[1:-1]) \
        / (hl * hr * (hl + hr))
    return out


def _norm_sq(orbit: PeriodicOrbit) -> float:
    """<u_z, u_z> summed over profile fields (mean quadrature)."""
    return float(sum(np.mean(fourier_derivative(f, 1)**2) for f in orbit.profile))


# -- Floquet ------------------------------------------------------------------

@dataclass
class FloquetData:
    multipliers: np.ndarray
    floquet_class: str
    monodromy: np.ndarray
    unit_pair_error: float
    lambda_unstable: float
    lambda_stable: float
    _orbit: PeriodicOrbit = None
    _dense: object = None
    _v_unstable: np.ndarray = None
    _v_stable: np.ndarray = None

    @property
    def det_error(self) -> float:
        return abs(np.linalg.det(self.monodromy) - 1.0)

    def direction(self, theta: float, side: str) -> np.ndarray:
        """Unit stable/unstable eigendirection at orbit phase theta.

        Transported with the fundamental solution, so it varies continuously
        in theta.
        """
        v0 = self._v_unstable if side == "unstable" else self._v_stable
        if v0 is None:
            raise ToolkitError("orbit has no real positive hyperbolic splitting")
        x = (theta % (2 * np.pi)) / self._orbit.k
        Phi = self._dense(x).reshape(4, 4)
        v = Phi @ v0
        return v / np.linalg.norm(v)


def floquet(orbit: PeriodicOrbit, tol: float = 1e-12) -> FloquetData:
    """Monodromy of the variational flow over one period and its spectrum."""
    model, k = orbit.model, orbit.k

    def rhs(x, y):
        A = model.rhs_jacobian(orbit.embed(np.atleast_1d(k * x))[0])
        return (A @ y.reshape(4, 4)).ravel()

    sol = solve_ivp(rhs, (0.0, orbit.period), np.eye(4).ravel(),
                    method="DOP853", rtol=tol, atol=tol, dense_output=True)
    if sol.status != 0:
        raise ToolkitError(f"variational integration failed: {sol.message}")
    Mmat = sol.y[:, -1].reshape(4, 4)
    lams, vecs = np.linalg.eig(Mmat)
    order = np.argsort(np.abs(lams - 1.0))
    unit_err = float(np.max(np.abs(lams[order[:2]] - 1.0)))
    pair = lams[order[2:]]
    vpair = vecs[:, order[2:]]

    cls = "degenerate"
    lam_u = lam_s = np.nan
    vu = vs = None
    real_pair = np.max(np.abs(pair.imag)) <= 1e-7 * (1.0 + np.max(np.abs(pair)))
    if real_pair:
        pr = pair.real
        if np.all(pr > 0):
            if np.max(pr) > 1.0 + 1e-6:
                cls = "hyperbolic"
                iu, isv = int(np.argmax(pr)), int(np.argmin(pr))
                lam_u, lam_s = float(pr[iu]), float(pr[isv])
                vu = np.real(vpair[:, iu])
                vs = np.real(vpair[:, isv])
                vu /= np.linalg.norm(vu)
                vs /= np.linalg.norm(vs)
        elif np.all(pr < 0) and np.max(np.abs(np.abs(pr) - 1.0)) > 1e-6:
            cls = "inverse-hyperbolic"
    elif np.max(np.abs(np.abs(pair) - 1.0)) <= 1e-6:
        cls = "elliptic"
    return FloquetData(lams[np.argsort(-np.abs(lams))], cls, Mmat, unit_err,
                       lam_u, lam_s, orbit, sol.sol, vu, vs)


# -- Bloch spectrum -----------------------------------------------------------

def _fft_basis(n):
    F = np.fft.fft(np.eye(n), axis=0)
    return F, np.conj(F.T) / n   # F^{-1} = F*/n


def _bloch_matrix(orbit: PeriodicOrbit, nu: float) -> np.ndarray:
    model, k = orbit.model, orbit.k
    n = orbit.n
    m = np.fft.fftfreq(n, d=1.0 / n)
    F, Finv = _fft_basis(n)
    if model.kind == "sh":
        sym = (nu + k * m)**4 - model.sigma * (nu + k * m)**2
        B = Finv @ (sym[:, None] * F) + np.diag(model.v(orbit.profile[0], 2))
        return 0.5 * (B + B.conj().T)
    a, c = model.params["a"], model.params["c"]
    h, u = orbit.profile
    f_hh, f_hu, f_uu = model.bigF_hess(h, u)
    quad = (nu + k * m)**2
    Dh = Finv @ ((-c * quad)[:, None] * F)
    Du = Finv @ ((-a * quad)[:, None] * F)
    B = np.block([[Dh - np.diag(f_hh), -np.diag(f_hu)],
                  [-np.diag(f_hu), Du - np.diag(f_uu)]])
    return 0.5 * (B + B.conj().T)


def _bloch_apply(orbit: PeriodicOrbit, nu: float, v: np.ndarray) -> np.ndarray:
    """Apply the twisted linearization through its Fourier symbol.

    Accurate for spectrally smooth v, avoiding the cancellation floor of the
    dense matrix at large mode numbers.
    """
    model, k, n = orbit.model, orbit.k, orbit.n
    m = np.fft.fftfreq(n, d=1.0 / n)
    if model.kind == "sh":
        sym = (nu + k * m)**4 - model.sigma * (nu + k * m)**2
        return (np.fft.ifft(sym * np.fft.fft(v))
                + model.v(orbit.profile[0], 2) * v)
    a, c = model.params["a"], model.params["c"]
    h, u = orbit.profile
    f_hh, f_hu, f_uu = model.bigF_hess(h, u)
    quad = (nu + k * m)**2
    vh, vu = v[:n], v[n:]
    oh = np.fft.ifft(-c * quad * np.fft.fft(vh)) - f_hh * vh - f_hu * vu
    ou = np.fft.ifft(-a * quad * np.fft.fft(vu)) - f_hu * vh - f_uu * vu
    return np.concatenate([oh, ou])


def _goldstone_vector(orbit: PeriodicOrbit) -> np.ndarray:
    vecs = [fourier_derivative(f, 1) for f in orbit.profile]
    return np.concatenate(vecs) if len(vecs) > 1 else vecs[0]


def bloch_eigenvalue(orbit: PeriodicOrbit, nu: float, step: float = 0.02):
    """Eigenvalue branch through mu(0) = 0 with eigenfunction through u_z.

    Tracked from nu = 0 by eigenvector overlap, then sharpened by inverse
    iteration and a symbol-based Rayleigh quotient.  Returns ``(mu, W)``.
    """
    v = _goldstone_vector(orbit).astype(complex)
    v /= np.linalg.norm(v)
    nsteps = max(1, int(np.ceil(abs(nu) / step)))
    mu = 0.0
    for j in range(1, nsteps + 1):
        nu_j = nu * j / nsteps
        B = _bloch_matrix(orbit, nu_j)
        w, V = np.linalg.eigh(B)
        idx = int(np.argmax(np.abs(V.conj().T @ v)))
        mu, v = float(w[idx]), V[:, idx]
    B = _bloch_matrix(orbit, nu)
    for _ in range(2):
        try:
            vn = np.linalg.solve(B - (mu + 1e-13) * np.eye(B.shape[0]), v)
        except np.linalg.LinAlgError:
            break
        v = vn / np.linalg.norm(vn)
        num = np.vdot(v, _bloch_apply(orbit, nu, v))
        mu = float(np.real(num) / np.real(np.vdot(v, v)))
    return mu, v


def bloch_mu2(orbit: PeriodicOrbit, h: float = 0.002) -> float:
    """mu''(0) by a 5-point centered stencil (finite-difference oracle)."""
    mu0, _ = bloch_eigenvalue(orbit, 0.0)
    vals = {j: bloch_eigenvalue(orbit, j * h)[0] for j in (-2, -1, 1, 2)}
    return (-vals[2] + 16 * vals[1] - 30 * mu0 + 16 * vals[-1] - vals[-2]) / (12 * h**2)


def kappa_from_bloch(orbit: PeriodicOrbit, h: float = 0.03,
                     fit_tol: float = 1e-3) -> float:
    """Coefficient K from an even-polynomial fit of the Bloch branch.

    mu(nu) is sampled at nu = +-(1..4)h, parity-averaged, and fitted to
    c2 nu^2 + c4 nu^4 + c6 nu^6; then K = <u_z, u_z> mu''''(0)/24
    = <u_z, u_z> c4.  Raises when the fit residual exceeds ``fit_tol``
    relative to the sampled values (stencil too wide or too narrow).
    """
    norm_uz = _norm_sq(orbit)
    nus = h * np.arange(1, 5)
    mus = []
    for nu in nus:
        mp, _ = bloch_eigenvalue(orbit, nu)
        mm, _ = bloch_eigenvalue(orbit, -nu)
        mus.append(0.5 * (mp + mm))
    mus = np.asarray(mus)
    y = nus**2
    vand = np.stack([y, y**2, y**3], axis=1)
    coef, *_ = np.linalg.lstsq(vand, mus, rcond=None)
    fit_err = float(np.max(np.abs(vand @ coef - mus)))
    if fit_err > fit_tol * (float(np.max(np.abs(mus))) + 1e-300):
        raise ToolkitError(f"Bloch polynomial fit residual {fit_err:.2e} "
                           f"too large for stencil h={h}")
    return float(norm_uz * coef[1])


# -- Jordan chain -------------------------------------------------------------

@dataclass
class JordanChain:
    xi1: np.ndarray
    xi2: np.ndarray
    xi3: np.ndarray
    xi4: np.ndarray
    stage2_ip: float     # identically 0: algebraic multiplicity two is automatic
    stage3_ip: float     # equals -A_k
    stage4_ip: float     # ~0 when the chain extends to length four


def _chain_ops(orbit: PeriodicOrbit):
    k, sigma = orbit.k, orbit.model.sigma

    def lp(v):          # d/d(lambda) of the spectral operator at 0
        return 4 * k**3 * fourier_derivative(v, 3) + 2 * sigma * k * fourier_derivative(v, 1)

    def lpp_half(v):    # (1/2) d^2/d(lambda)^2
        return 6 * k**2 * fourier_derivative(v, 2) + sigma * v

    return lp, lpp_half


def jordan_chain(orbit: PeriodicOrbit, derivs=None) -> JordanChain:
    """Generalized eigenvectors xi_1..xi_4 at the zero Floquet exponent.

    Defined for the SH family.  xi1 = u_z, xi2 = u_k; the chain extends past
    length two only where A_k = 0, and the reported stage-3 inner product
    equals -A_k.  Kernel components are fixed by orthogonality to u_z.
    """
    if orbit.model.kind != "sh":
        raise UnsupportedModel("Jordan chain machinery is for the SH family")
    if orbit.profile_variance() < 1e-14:
        raise ToolkitError("constant orbit has xi1 = 0; chain undefined")
    n = orbit.n
    xi1 = orbit.zderiv(1)
    if derivs is None:
        derivs = k_derivatives(orbit, 1)
    xi2 = derivs[0][0]
    M = _linearization(orbit.model, orbit.k, orbit.profile, orbit.drift)
    lp, lpp_half = _chain_ops(orbit)

    rhs2 = -lp(xi1)
    rhs3 = -(lp(xi2) + lpp_half(xi1))
    (xi3,), _ = _bordered_solve(M, xi1, [rhs3], n)
    rhs4 = -(lp(xi3) + lpp_half(xi2) + 4 * orbit.k * fourier_derivative(xi1, 1))
    (xi4,), _ = _bordered_solve(M, xi1, [rhs4], n)
    return JordanChain(xi1, xi2, xi3, xi4,
                       inner(xi1, rhs2), inner(xi1, rhs3), inner(xi1, rhs4))


def kappa_from_chain(orbit: PeriodicOrbit, chain: JordanChain | None = None) -> float:
    """K as the chain-termination quantity <u_z, T(xi3, xi4, u_k)>."""
    if chain is None:
        chain = jordan_chain(orbit)
    k, sigma = orbit.k, orbit.model.sigma
    t = (4 * k**3 * fourier_derivative(chain.xi4, 3)
         + 2 * sigma * k * fourier_derivative(chain.xi4, 1)
         + 6 * k**2 * fourier_derivative(chain.xi3, 2) + sigma * chain.xi3
         + 4 * k * fourier_derivative(chain.xi2, 1) + chain.xi1)
    return inner(chain.xi1, t)


def modulation_kappa(orbit: PeriodicOrbit, derivs=None, chain=None,
                     h: float = 1e-3, sens_tol: float = 0.05) -> float:
    """Coefficient kappa of q^2 q_X in the wavenumber modulation equation.

    Needs a codimension-two orbit (A_k ~ A_kk ~ 0).  xi3_k is obtained by
    phase-aligned centered differences of the chain across nearby
    wavenumbers; 2 kappa = A_kkk is the cross-check.  Raises when halving
    the k-stencil moves kappa by more than ``sens_tol`` relatively.
    """
    if orbit.model.kind != "sh":
        raise UnsupportedModel("modulation coefficients are for the SH family")
    if orbit.profile_variance() < 1e-14:
        raise ToolkitError("constant orbit rejected")
    if derivs is None:
        derivs = k_derivatives(orbit, 3)
    ak, akk, _ = action_derivatives(orbit, derivs)
    scale = abs(action_of_orbit(orbit)) + 1.0
    if abs(ak) > 1e-6 * scale or abs(akk) > 1e-4 * scale:
        raise ToolkitError("modulation kappa needs A_k = A_kk = 0 "
                           f"(got A_k={ak:.2e}, A_kk={akk:.2e})")
    if chain is None:
        chain = jordan_chain(orbit, derivs)

    def xi3_at(kval):
        orb = orbit_at(orbit, k=kval)
        return jordan_chain(orb, k_derivatives(orb, 1)).xi3

    def kappa_with(hh):
        xi3k = (xi3_at(orbit.k + hh) - xi3_at(orbit.k - hh)) / (2 * hh)
        return _kappa_quadrature(orbit, derivs, chain.xi3, xi3k)

    kap = kappa_with(h)
    kap2 = kappa_with(0.5 * h)
    if abs(kap - kap2) > sens_tol * (abs(kap) + 1e-300):
        raise ToolkitError("finite-difference noise dominates kappa "
                           f"({kap:.6e} vs {kap2:.6e})")
    return kap


def _kappa_quadrature(orbit, derivs, xi3, xi3k):
    model, k = orbit.model, orbit.k
    sigma = model.sigma
    u = orbit.profile[0]
    uk, ukk, ukkk = derivs[0][0], derivs[1][0], derivs[2][0]

    def dz(a, p):
        return fourier_derivative(a, p)

    ups = (2 * k**3 * dz(ukkk, 3) + 15 * k**2 * dz(ukk, 3) + 24 * k * dz(uk, 3)
           + 6 * dz(u, 3)
           + 4 * k**3 * dz(xi3k, 4) + 6 * k**2 * dz(xi3, 4)
           + 2 * sigma * k * dz(xi3k, 2) + sigma * dz(xi3, 2)
           + sigma * k * dz(ukkk, 1) + 2.5 * sigma * dz(ukk, 1)
           + 0.5 * model.v(u, 4) * uk**2 * xi3
           + 0.5 * model.v(u, 3) * ukk * xi3
           + model.v(u, 3) * uk * xi3k)
    return inner(orbit.zderiv(1), ups)


# -- assembled record ---------------------------------------------------------

@dataclass
class OrbitDiagnostics:
    A: float
    H: float
    A_k: float
    A_kk: float
    A_kkk: float
    multipliers: np.ndarray
    floquet_class: str
    norm_uz: float
    K_bloch: float = np.nan
    K_chain: float = np.nan


def diagnose(orbit: PeriodicOrbit, with_bloch: bool = False,
             with_chain: bool = False) -> OrbitDiagnostics:
    derivs = k_derivatives(orbit, 3)
    ak, akk, akkk = action_derivatives(orbit, derivs)
    fl = floquet(orbit)
    kb = kc = np.nan
    if with_bloch:
        kb = kappa_from_bloch(orbit)
    if with_chain:
        kc = kappa_from_chain(orbit, jordan_chain(orbit, derivs))
    return OrbitDiagnostics(action_of_orbit(orbit), orbit.hamiltonian(),
                            ak, akk, akkk, fl.multipliers, fl.floquet_class,
                            _norm_sq(orbit), kb, kc)
