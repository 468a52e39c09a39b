"""Shared numerical plumbing.

Adaptive phase-space integration with hyperplane event location, spectral
differentiation and trigonometric interpolation on the periodic z-grid, and
a dense bordered Newton solver used by every collocation system in the
package.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import lu_factor, lu_solve, get_lapack_funcs

__all__ = [
    "ToolkitError", "NonConvergence", "SingularSystem", "BlowUp", "NoCrossing",
    "PeriodicGrid", "Section", "Trajectory",
    "fourier_modes", "fourier_derivative", "diff_matrix",
    "trig_interp", "interp_kernel", "spectral_derivative",
    "integrate", "integrate_to_section", "newton_bordered", "NewtonResult",
]


class ToolkitError(RuntimeError):
    pass


class NonConvergence(ToolkitError):
    pass


class SingularSystem(ToolkitError):
    pass


class BlowUp(ToolkitError):
    pass


class NoCrossing(ToolkitError):
    pass


# -- spectral machinery on z in [0, 2*pi) -----------------------------------

def fourier_modes(n: int) -> np.ndarray:
    """Integer mode numbers in FFT ordering."""
    return np.fft.fftfreq(n, d=1.0 / n)


def fourier_derivative(values: np.ndarray, order: int) -> np.ndarray:
    """Spectral derivative of samples on z_j = 2*pi*j/n along the last axis."""
    values = np.asarray(values, float)
    n = values.shape[-1]
    m = np.fft.rfftfreq(n, d=1.0 / n)
    mult = (1j * m) ** order
    if order % 2 == 1 and n % 2 == 0:
        mult[-1] = 0.0  # Nyquist mode has no well-defined odd derivative
    return np.fft.irfft(np.fft.rfft(values, axis=-1) * mult, n, axis=-1)


@lru_cache(maxsize=None)
def diff_matrix(n: int, order: int) -> np.ndarray:
    """Dense spectral differentiation matrix on the n-point periodic grid."""
    return fourier_derivative(np.eye(n), order).T.copy()


def trig_interp(values: np.ndarray, z) -> np.ndarray:
    """Evaluate the trigonometric interpolant of grid samples at points z."""
    values = np.asarray(values, float)
    n = values.shape[-1]
    z = np.atleast_1d(np.asarray(z, float))
    c = np.fft.rfft(values, axis=-1) / n
    m = np.arange(c.shape[-1])
    phase = np.exp(1j * np.outer(z, m))        # (nz, n//2+1)
    weights = np.full(c.shape[-1], 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0                      # cosine-form Nyquist term
    out = np.real(phase * weights) @ np.real(c.T) - np.imag(phase * weights) @ np.imag(c.T)
    return out.T if values.ndim > 1 else out.reshape(z.shape)


def interp_kernel(n: int, z) -> np.ndarray:
    """Rows of the cardinal trigonometric interpolation matrix at points z.

    K[i, l] gives the sensitivity of the interpolant at z_i to grid value l;
    exact for trigonometric polynomials resolved on the n-point grid.
    """
    if n % 2:
        raise ValueError("even grid expected")
    z = np.atleast_1d(np.asarray(z, float))
    zl = 2.0 * np.pi * np.arange(n) / n
    t = z[:, None] - zl[None, :]
    small = np.abs(np.remainder(t + np.pi, 2 * np.pi) - np.pi) < 1e-14
    ts = np.where(small, 1.0, t)
    out = np.sin(n * ts / 2.0) / (n * np.tan(ts / 2.0))
    out[small] = 1.0
    return out


@dataclass
class PeriodicGrid:
    """Real samples on the uniform periodic grid z_j = 2*pi*j/n."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, float)
        if self.values.ndim != 1:
            raise ValueError("PeriodicGrid holds a single field")
        if self.n_points < 16 or self.n_points % 2:
            raise ValueError("need an even grid with at least 16 points")

    @property
    def n_points(self) -> int:
        return self.values.size

    @property
    def nodes(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.n_points) / self.n_points

    def derivative(self, order: int = 1) -> "PeriodicGrid":
        return PeriodicGrid(fourier_derivative(self.values, order))

    def __call__(self, z):
        return trig_interp(self.values, z)


def spectral_derivative(grid: PeriodicGrid, order: int) -> PeriodicGrid:
    if order not in (1, 2, 3, 4):
        raise ValueError("order must be between 1 and 4")
    return grid.derivative(order)


# -- sections ---------------------------------------------------------------

@dataclass(frozen=True)
class Section:
    """Oriented hyperplane {p : normal . p = offset} in phase space."""

    normal: tuple
    offset: float = 0.0
    orientation: int = 1

    def __post_init__(self):
        n = np.asarray(self.normal, float)
        if not np.linalg.norm(n) > 0:
            raise ValueError("section normal must be nonzero")
        object.__setattr__(self, "normal", tuple(n))

    @property
    def normal_array(self) -> np.ndarray:
        return np.asarray(self.normal, float)

    def value(self, p):
        return np.asarray(p, float) @ self.normal_array - self.offset

    def basis(self) -> np.ndarray:
        """Deterministic orthonormal basis (3 x dim) of the hyperplane."""
        n = self.normal_array / np.linalg.norm(self.normal_array)
        _, _, vt = np.linalg.svd(n[None, :])
        return vt[1:]

    def project(self, p):
        """In-plane coordinates of phase points (rows)."""
        return (np.asarray(p, float) - self.offset * self.normal_array
                / np.dot(self.normal_array, self.normal_array)) @ self.basis().T


# -- integration -------------------------------------------------------------

@dataclass
class Trajectory:
    """Sampled solution of the phase-space flow with dense interpolation."""

    x: np.ndarray
    states: np.ndarray          # (npts, dim)
    sol: object = None          # scipy dense-output object

    def at(self, x):
        if self.sol is None:
            raise ToolkitError("trajectory stored without dense output")
        out = self.sol(np.atleast_1d(x))
        return out.T if np.ndim(x) else out[:, 0]

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]


def _checked_solve(model, p0, x_span, tol, events=None, max_step=np.inf):
    amp_cap = 1e6 * (1.0 + np.max(np.abs(p0)))

    def rhs(x, y):
        return model.rhs(y)

    def blowup(x, y):
        return np.max(np.abs(y)) - amp_cap
    blowup.terminal = True

    evs = [blowup] + (events or [])
    sol = solve_ivp(rhs, x_span, np.asarray(p0, float), method="DOP853",
                    rtol=tol, atol=tol, dense_output=True, events=evs,
                    max_step=max_step)
    if sol.status == -1 or not np.all(np.isfinite(sol.y)):
        raise BlowUp(f"integration failed: {sol.message}")
    if len(sol.t_events[0]):
        raise BlowUp("state amplitude exceeded blow-up threshold")
    return sol


def integrate(model, p0, x_span, tol: float = 1e-10, max_step=np.inf) -> Trajectory:
    """Adaptive integration of p' = f(p) over x_span at local error tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    sol = _checked_solve(model, p0, x_span, tol, max_step=max_step)
    return Trajectory(sol.t, sol.y.T, sol.sol)


class _ReversedFlow:
    def __init__(self, model):
        self._model = model

    def rhs(self, y):
        return -self._model.rhs(y)


def integrate_to_section(model, p0, section: Section, x_max: float,
                         tol: float = 1e-10, forward: bool = True):
    """First oriented crossing of a hyperplane.

    Returns ``(hit, x_hit, trajectory)`` where ``x_hit`` is the (positive)
    integration length; for ``forward=False`` the reversed field is flowed,
    so the crossing lies at ``-x_hit`` in original time.  The hit is polished
    by Newton on the dense output to |normal . p - offset| <= 1e-10.
    """
    if x_max <= 0:
        raise ValueError("x_max must be positive")
    nvec = section.normal_array
    flow = model if forward else _ReversedFlow(model)

    def cross(x, y):
        return float(nvec @ y - section.offset)
    cross.terminal = True
    cross.direction = float(section.orientation)

    sol = _checked_solve(flow, p0, (0.0, x_max), tol, events=[cross])
    hits = sol.t_events[1]
    if not len(hits):
        raise NoCrossing("no oriented section crossing before x_max")
    xh = float(hits[0])
    # Newton polish on the dense output
    for _ in range(8):
        y = sol.sol(xh)
        g = float(nvec @ y - section.offset)
        if abs(g) <= 1e-12:
            break
        dg = float(nvec @ flow.rhs(y))
        if dg == 0.0:
            break
        step = g / dg
        xh -= step
        if abs(step) < 1e-15 * max(1.0, abs(xh)):
            break
    hit = sol.sol(xh)
    if abs(nvec @ hit - section.offset) > 1e-10:
        raise NoCrossing("event refinement failed to reach tolerance")
    traj = Trajectory(sol.t, sol.y.T, sol.sol)
    return hit, xh, traj


# -- Newton -------------------------------------------------------------------

@dataclass
class NewtonResult:
    x: np.ndarray
    residual_norm: float
    iterations: int
    converged: bool = True


def _fd_jacobian(fun, x, r0, step):
    n = x.size
    J = np.empty((r0.size, n))
    for i in range(n):
        h = step * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        J[:, i] = (fun(xp) - r0) / h
    return J


def newton_bordered(residual, unknowns, tol: float = 1e-10, max_iter: int = 25,
                    jac=None, fd_step: float = 1e-7, cond_limit: float = 1e14,
                    damping: bool = True) -> NewtonResult:
    """Dense Newton iteration for square (bordered) systems.

    ``jac`` may supply the analytic Jacobian; otherwise one-sided finite
    differences with step ``fd_step * (1 + |x|)`` are used.  Raises
    ``SingularSystem`` when the LU condition estimate exceeds ``cond_limit``
    and ``NonConvergence`` when ``max_iter`` is exhausted.
    """
    x = np.asarray(unknowns, float).copy()
    r = np.asarray(residual(x), float)
    if r.size != x.size:
        raise ValueError("residual and unknown dimensions differ")
    rn = np.max(np.abs(r))
    for it in range(1, max_iter + 1):
        if rn <= tol:
            return NewtonResult(x, rn, it - 1)
        J = np.asarray(jac(x), float) if jac is not None else _fd_jacobian(residual, x, r, fd_step)
        lu, piv = lu_factor(J)
        gecon = get_lapack_funcs("gecon", (J,))
        rcond = gecon(lu, np.linalg.norm(J, 1), norm="1")[0]
        if not np.isfinite(rcond) or (rcond > 0 and 1.0 / rcond > cond_limit) or rcond == 0:
            raise SingularSystem(f"Jacobian condition estimate {0 if rcond == 0 else 1.0/rcond:.2e}")
        d = lu_solve((lu, piv), r)
        lam = 1.0
        while True:
            xn = x - lam * d
            rnew = np.asarray(residual(xn), float)
            rnn = np.max(np.abs(rnew))
            if not damping or rnn <= (1.0 - 0.2 * lam) * rn or rnn <= tol or lam <= 1.0 / 64:
                break
            lam *= 0.5
        if not np.all(np.isfinite(rnew)):
            raise NonConvergence("residual became non-finite")
        x, r, rn = xn, rnew, rnn
    if rn <= tol:
        return NewtonResult(x, rn, max_iter)
    raise NonConvergence(f"no convergence after {max_iter} iterations "
                         f"(residual {rn:.3e})")
