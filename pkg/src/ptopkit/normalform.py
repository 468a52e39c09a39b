"""Unfolded codimension-two normal form of the wavenumber modulation.

After one integration the modulation equation reads

    K q_XX + alpha q + (beta/2) q^2 + s q^3 + I = 0,     s = A_kkk / 6,

with alpha, beta unfolding the first two action derivatives and I the
integration constant.  Conjugate constant states Q1 < Q2 exist when
beta^2/12 - s*alpha >= 0, are hyperbolic when sign(K*s) < 0, and are then
joined by an explicit tanh front.

Note the first integral: with the potential level set by the conjugate
states, (1/2) K q_X^2 = -(s/4)(q-Q1)^2(q-Q2)^2, so the front satisfies
q_X = +-sqrt(-s/(2K)) (q-Q1)(Q2-q) and has steepness
delta = sqrt(|s/(2K)|) (Q2-Q1)/2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diagnostics as diag
from .numerics import ToolkitError
from .orbit import PeriodicOrbit, orbit_at, solve_periodic

__all__ = [
    "NormalFormCoeffs", "ExistenceError", "HyperbolicityError",
    "conjugate_states", "coefficients_from_point", "tanh_connection",
    "reconstruct_ansatz", "potential", "potential_level",
]


class ExistenceError(ToolkitError):
    """The conjugate-state discriminant is negative."""


class HyperbolicityError(ToolkitError):
    """sign(K s) >= 0: the conjugate states are not hyperbolic."""


@dataclass
class NormalFormCoeffs:
    """Coefficient record of the unfolded normal form.

    alpha, beta, s are in the (scaled) modulation units; ``eps`` is the
    modulation scale so that physical wavenumber offsets are eps*Q.
    """

    alpha: float
    beta: float
    s: float
    K: float
    I: float = np.nan
    Q1: float = np.nan
    Q2: float = np.nan
    H_level: float = np.nan
    delta: float = np.nan
    eps: float = 1.0
    k0: float = np.nan

    @property
    def discriminant(self) -> float:
        return self.beta**2 / 12.0 - self.s * self.alpha

    @property
    def hyperbolic(self) -> bool:
        return bool(np.sign(self.K * self.s) < 0)

    @property
    def k_minus(self) -> float:
        return self.k0 + self.eps * self.Q1

    @property
    def k_plus(self) -> float:
        return self.k0 + self.eps * self.Q2


def potential(coeffs: NormalFormCoeffs, q):
    """Quartic potential I q + alpha q^2/2 + beta q^3/6 + s q^4/4."""
    q = np.asarray(q, float)
    return (coeffs.I * q + 0.5 * coeffs.alpha * q**2
            + coeffs.beta * q**3 / 6.0 + 0.25 * coeffs.s * q**4)


def potential_level(coeffs: NormalFormCoeffs) -> float:
    return coeffs.H_level


def conjugate_states(alpha: float, beta: float, s: float):
    """Conjugate constant states and their shared action/potential levels.

    Returns (Q1, Q2, I, H_level) with Q1 < Q2.  Raises ``ExistenceError``
    when beta^2/12 - s*alpha < 0 (equivalently A_kk^2 < 2 A_k A_kkk).
    """
    if s == 0:
        raise ToolkitError("cubic coefficient vanishes; no codim-2 normal form")
    D = beta**2 / 12.0 - s * alpha
    if D < 0:
        raise ExistenceError(f"discriminant {D:.3e} < 0: no conjugate states")
    root = np.sqrt(D) / abs(s)
    center = -beta / (6.0 * s)
    Q1, Q2 = center - root, center + root
    I = beta * (18.0 * s * alpha - beta**2) / (108.0 * s**2)
    H_level = -(18.0 * s * alpha - beta**2)**2 / (1296.0 * s**3)
    return Q1, Q2, I, H_level


def _filled(alpha, beta, s, K, eps=1.0, k0=np.nan) -> NormalFormCoeffs:
    Q1, Q2, I, H_level = conjugate_states(alpha, beta, s)
    c = NormalFormCoeffs(alpha, beta, s, K, I, Q1, Q2, H_level, eps=eps, k0=k0)
    if c.hyperbolic:
        c.delta = float(np.sqrt(abs(s / (2.0 * K))) * 0.5 * (Q2 - Q1))
    return c


def coefficients_from_point(point, at_model=None, eps: float = 0.1) -> NormalFormCoeffs:
    """Normal-form coefficients at (or near) a codimension-two point.

    ``point`` is a ``codim2.Codim2Point``.  With ``at_model`` the unfolded
    parameter set, alpha and beta are the first two action derivatives of
    the orbit re-solved there at the frozen wavenumber k0, scaled by the
    modulation bookkeeping (alpha = A_k/eps^2, beta = A_kk/eps); s and K are
    taken from the codim-2 point itself.
    """
    s = point.A_kkk / 6.0
    if abs(point.A_kkk) < 1e-6:
        raise ToolkitError("third action derivative too small for a "
                           "codim-2 normal form")
    K = point.K
    if at_model is None:
        alpha = beta = 0.0
        return NormalFormCoeffs(alpha, beta, s, K, I=0.0, Q1=0.0, Q2=0.0,
                                H_level=0.0, eps=eps, k0=point.orbit.k)
    orb = orbit_at(point.orbit, model=at_model)
    from .orbit import k_derivatives
    ak, akk = diag.action_derivatives(orb, k_derivatives(orb, 2))
    return _filled(ak / eps**2, akk / eps, s, K, eps=eps, k0=point.orbit.k)


def tanh_connection(coeffs: NormalFormCoeffs, branch: str = "+",
                    x_max: float | None = None, n: int = 1001):
    """Explicit front of the integrated normal form.

    Returns ``(X, q, phi)`` sampled on [-x_max, x_max] together with the
    callables ``q_of`` and ``phi_of`` (phi integrates q with phi(0) chosen
    so the log-cosh term vanishes at X = 0; the constant offset phi_0 = 0).

        q(X)   = (Q1+Q2)/2 +- (Q2-Q1)/2 tanh(delta X)
        phi(X) = (Q1+Q2)/2 X +- (Q2-Q1)/(2 delta) log cosh(delta X)
    """
    if not np.isfinite(coeffs.Q1) or not np.isfinite(coeffs.Q2):
        raise ExistenceError("coefficients carry no conjugate states")
    if not coeffs.hyperbolic:
        raise HyperbolicityError("sign(K s) >= 0: no front in the normal form")
    if branch not in ("+", "-"):
        raise ValueError("branch is '+' or '-'")
    sgn = 1.0 if branch == "+" else -1.0
    mid = 0.5 * (coeffs.Q1 + coeffs.Q2)
    amp = 0.5 * (coeffs.Q2 - coeffs.Q1)
    delta = coeffs.delta
    if x_max is None:
        x_max = 14.0 / delta

    def q_of(X):
        return mid + sgn * amp * np.tanh(delta * np.asarray(X, float))

    def phi_of(X):
        X = np.asarray(X, float)
        # log cosh written overflow-safe
        lc = np.abs(delta * X) + np.log1p(np.exp(-2 * np.abs(delta * X))) - np.log(2.0)
        return mid * X + sgn * (amp / delta) * lc

    X = np.linspace(-x_max, x_max, n)
    return X, q_of(X), phi_of(X), q_of, phi_of


def reconstruct_ansatz(point, coeffs: NormalFormCoeffs, x,
                       branch: str = "+", n_family: int = 9):
    """Modulated-wavetrain reconstruction u(x) = u(k0 x + phi(eps x), k0 + eps q(eps x)).

    The orbit family is solved on a small wavenumber grid spanning
    [k0 + eps Q1, k0 + eps Q2] (shared phase reference, so the profiles can
    be interpolated pointwise in k).  Returns ``(u, far)`` where ``u`` has
    shape (n_fields, len(x)) and ``far`` carries the tail data
    (k_minus, k_plus, shifted far-field orbits, common phase offset).
    """
    eps = coeffs.eps
    _, _, _, q_of, phi_of = tanh_connection(coeffs, branch=branch)
    orbit0 = point.orbit
    k0 = orbit0.k
    km = k0 + eps * (coeffs.Q1 if branch == "+" else coeffs.Q2)
    kp = k0 + eps * (coeffs.Q2 if branch == "+" else coeffs.Q1)

    kgrid = np.linspace(min(km, kp), max(km, kp), n_family)
    kgrid = np.unique(np.concatenate([kgrid, [k0]]))
    profiles = {}
    orb_cache = {}
    for kk in kgrid:
        orb = orbit_at(orbit0, k=float(kk))
        orb_cache[float(kk)] = orb
        profiles[float(kk)] = orb.profile
    kks = np.array(sorted(profiles))
    stack = np.stack([profiles[kk] for kk in kks])      # (nk, m, n)

    x = np.asarray(x, float)
    X = eps * x
    qx = q_of(X)
    kx = k0 + eps * qx
    phx = phi_of(X)
    theta = (k0 * x + phx) % (2 * np.pi)

    m, nz = stack.shape[1], stack.shape[2]
    # pointwise cubic interpolation of the profile family in k
    from scipy.interpolate import CubicSpline
    spl = CubicSpline(kks, stack, axis=0)
    prof_x = spl(np.clip(kx, kks[0], kks[-1]))          # (len(x), m, n)
    out = np.empty((m, x.size))
    for fld in range(m):
        coeff = np.fft.rfft(prof_x[:, fld, :], axis=-1) / nz
        modes = np.arange(coeff.shape[-1])
        w = np.full(coeff.shape[-1], 2.0)
        w[0] = 1.0
        if nz % 2 == 0:
            w[-1] = 1.0
        phase = np.exp(1j * np.outer(theta, modes))
        out[fld] = np.sum(np.real(phase * coeff) * w, axis=-1)

    far = {"k_minus": float(km), "k_plus": float(kp),
           "orbit_minus": orb_cache.get(float(km)) or orbit_at(orbit0, k=km),
           "orbit_plus": orb_cache.get(float(kp)) or orbit_at(orbit0, k=kp),
           "phase_offset": float((coeffs.Q2 - coeffs.Q1) / (2 * coeffs.delta)
                                 * np.log(2.0) * (-1.0 if branch == "+" else 1.0))}
    return out, far
