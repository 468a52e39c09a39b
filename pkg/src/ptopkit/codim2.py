"""Codimension-1 loci A_k = 0 and codimension-2 points A_k = A_kk = 0 in
multi-parameter wavetrain families.

The locus continuation treats the orbit as an inner implicit function of
(k, parameters), solved by warm-started collocation, and runs
pseudo-arclength on the outer defining equations.  A codimension-2 point is
a fold of the codimension-1 curve in its second parameter (b'(s) = 0 with
k'(s) != 0), refined by a two-dimensional Newton solve on
{A_k = 0, A_kk = 0}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as diag
from .model import SystemModel
from .numerics import NonConvergence, SingularSystem, ToolkitError
from .orbit import Branch, PeriodicOrbit, k_derivatives, orbit_at

__all__ = [
    "Codim1Sample", "Codim1Curve", "Codim2Point",
    "seed_from_branch", "continue_ak_zero", "detect_fold", "continue_codim2",
    "hk_diagram",
]


@dataclass
class Codim1Sample:
    s: float
    k: float
    second: float
    orbit: PeriodicOrbit
    A: float
    A_k: float
    A_kk: float
    l2_norm: float


@dataclass
class Codim1Curve:
    second_name: str
    samples: list

    def column(self, name):
        return np.array([getattr(p, name) for p in self.samples])

    def __len__(self):
        return len(self.samples)


@dataclass
class Codim2Point:
    orbit: PeriodicOrbit
    k: float
    params: dict
    A_kkk: float
    K: float
    A_k: float = 0.0
    A_kk: float = 0.0
    second_name: str = ""

    @property
    def hyperbolic_unfolding(self) -> bool:
        """Front-producing sign: K * A_kkk < 0."""
        return bool(self.K * self.A_kkk < 0)


class _OrbitTracker:
    """Warm-started inner orbit solves over the (k, params) space."""

    def __init__(self, model: SystemModel, orbit: PeriodicOrbit,
                 tol: float = 1e-10):
        self.model = model
        self.current = orbit
        self.tol = tol

    def solve(self, k: float, **params) -> PeriodicOrbit:
        mdl = self.model.with_params(**params) if params else self.model
        orb = orbit_at(self.current, k=float(k), model=mdl, tol=self.tol)
        return orb

    def accept(self, orbit: PeriodicOrbit):
        self.current = self._resolved(orbit)

    def _resolved(self, orbit: PeriodicOrbit) -> PeriodicOrbit:
        from .orbit import _tail_fraction, _solve_fixed_grid
        if orbit.n >= 256 or _tail_fraction(orbit.profile) <= 1e-10:
            return orbit
        big = orbit.resample(2 * orbit.n)
        return _solve_fixed_grid(orbit.model, orbit.k, big.profile,
                                 big.reference, self.tol, 25)


def _ak_levels(orbit: PeriodicOrbit, order: int = 1):
    return diag.action_derivatives(orbit, k_derivatives(orbit, order))


def seed_from_branch(branch: Branch, tracker_tol: float = 1e-10) -> PeriodicOrbit:
    """Refine a sign change of A_k along a k-branch to an A_k = 0 orbit."""
    idx = branch.crossings("A_k", 0.0)
    if not idx:
        raise ToolkitError("no A_k sign change along the seed branch")
    i = idx[0]
    pa, pb = branch.points[i], branch.points[i + 1]
    ka, kb = pa.param, pb.param
    fa = pa.A_k
    orb = pa.orbit
    for _ in range(60):
        km = 0.5 * (ka + kb)
        orb = orbit_at(orb, k=km, tol=tracker_tol)
        fm = _ak_levels(orb, 1)[0]
        if abs(fm) < 1e-11 or abs(kb - ka) < 1e-13:
            break
        if fa * fm < 0:
            kb = km
        else:
            ka, fa = km, fm
    return orb


def continue_ak_zero(model: SystemModel, seed: PeriodicOrbit, second: str,
                     step: float = 0.01, n_steps: int = 60,
                     k_range=(1e-3, 10.0), second_range=(-1e6, 1e6),
                     tol: float = 1e-9) -> Codim1Curve:
    """Arclength continuation of the locus A_k(k, second) = 0.

    ``seed`` must already satisfy A_k ~ 0 at the model's current parameters
    (use ``seed_from_branch``).  The signed ``step`` picks the initial
    direction along the second parameter.
    """
    tracker = _OrbitTracker(model, seed)
    b0 = float(model.params[second])

    def F(k, b, accept=False):
        orb = tracker.solve(k, **{second: b})
        if accept:
            tracker.accept(orb)
        ak, akk = _ak_levels(orb, 2)
        return ak, akk, orb

    # make sure the seed sits on the locus
    k0 = seed.k
    ak0, akk0, orb0 = F(k0, b0, accept=True)
    if abs(ak0) > 1e-7 * (1 + abs(diag.action_of_orbit(orb0))):
        k0 = _newton_1d(lambda kk: F(kk, b0)[0], k0, 1e-11)
        ak0, akk0, orb0 = F(k0, b0, accept=True)

    def record(s, k, b, orb, ak, akk):
        return Codim1Sample(s, k, b, orb, diag.action_of_orbit(orb), ak, akk,
                            float(np.sqrt(np.mean(orb.profile**2))))

    samples = [record(0.0, k0, b0, orb0, ak0, akk0)]
    fd = 1e-6

    def grad(k, b):
        akp = F(k + fd, b)[0]
        akm = F(k - fd, b)[0]
        abp = F(k, b + fd)[0]
        abm = F(k, b - fd)[0]
        return np.array([(akp - akm) / (2 * fd), (abp - abm) / (2 * fd)])

    y = np.array([k0, b0])
    g = grad(*y)
    tan = np.array([-g[1], g[0]])
    tan /= np.linalg.norm(tan)
    if tan[1] * np.sign(step) < 0:
        tan = -tan
    h = abs(step)
    s_acc = 0.0

    for _ in range(n_steps):
        accepted = False
        while h >= 1e-7:
            y_pred = y + h * tan
            yy = y_pred.copy()
            ok = True
            for _ in range(12):
                ak, akk, orb = F(*yy)
                arc = tan @ (yy - y_pred)
                res = np.array([ak, arc])
                if np.max(np.abs(res)) < tol:
                    break
                gk = grad(*yy)
                J = np.stack([gk, tan])
                try:
                    dy = np.linalg.solve(J, res)
                except np.linalg.LinAlgError:
                    ok = False
                    break
                yy = yy - dy
            else:
                ok = False
            if ok:
                accepted = True
                break
            h *= 0.5
        if not accepted:
            break
        ak, akk, orb = F(*yy, accept=True)
        g_new = grad(*yy)
        t_new = np.array([-g_new[1], g_new[0]])
        t_new /= np.linalg.norm(t_new)
        if t_new @ tan < 0:
            t_new = -t_new
        s_acc += float(np.linalg.norm(yy - y))
        y, tan = yy, t_new
        samples.append(record(s_acc, y[0], y[1], orb, ak, akk))
        h = min(h * 1.3, abs(step) * 3)
        if not (k_range[0] <= y[0] <= k_range[1]) or \
           not (second_range[0] <= y[1] <= second_range[1]):
            break
    return Codim1Curve(second, samples)


def _newton_1d(f, x0, tol, h=1e-7, max_iter=30):
    x = x0
    for _ in range(max_iter):
        fx = f(x)
        if abs(fx) < tol:
            return x
        d = (f(x + h) - fx) / h
        if d == 0:
            raise NonConvergence("flat scalar residual")
        x -= fx / d
    raise NonConvergence("scalar Newton did not converge")


def detect_fold(model: SystemModel, curve: Codim1Curve,
                with_kappa: bool = True) -> tuple:
    """Locate the fold of the codim-1 curve in its second parameter.

    Returns ``(s_star, point)``.  The fold is bracketed by a sign change of
    b'(s), refined by a quadratic fit, then polished by the 2D Newton solve
    of {A_k = 0, A_kk = 0} in (k, second).  Rejects folds with k'(s*) ~ 0
    or a degenerate transverse derivative A_kb.
    """
    s = curve.column("s")
    ks = curve.column("k")
    bs = curve.column("second")
    if len(s) < 5:
        raise ToolkitError("curve too short to detect a fold")
    bp = diag.hk_finite_difference(s, bs)
    kp = diag.hk_finite_difference(s, ks)
    idx = [i for i in range(1, len(s) - 2)
           if np.isfinite(bp[i]) and np.isfinite(bp[i + 1]) and bp[i] * bp[i + 1] < 0]
    if not idx:
        raise ToolkitError("no fold of the second parameter in the sampled range")
    i = idx[0]
    # quadratic fit of b(s) around the bracket
    sl = slice(max(0, i - 1), min(len(s), i + 3))
    c = np.polyfit(s[sl], bs[sl], 2)
    s_star = float(-c[1] / (2 * c[0]))
    if abs(np.interp(s_star, s, kp, left=np.nan, right=np.nan)) < 1e-8:
        raise ToolkitError("k'(s*) ~ 0: degenerate fold rejected")

    k_guess = float(np.interp(s_star, s, ks))
    b_guess = float(np.interp(s_star, s, bs))
    seed_orbit = curve.samples[i].orbit
    point = _solve_codim2(model, seed_orbit, curve.second_name,
                          k_guess, b_guess, with_kappa=with_kappa)
    return s_star, point


def _solve_codim2(model: SystemModel, seed_orbit: PeriodicOrbit, second: str,
                  k_guess: float, b_guess: float, extra: dict = None,
                  tol: float = 1e-10, with_kappa: bool = True) -> Codim2Point:
    extra = extra or {}
    tracker = _OrbitTracker(model.with_params(**extra), seed_orbit)

    def F(k, b):
        orb = tracker.solve(k, **{second: b})
        ak, akk = _ak_levels(orb, 2)
        return np.array([ak, akk]), orb

    y = np.array([k_guess, b_guess])
    fd = 1e-6
    for _ in range(40):
        r, orb = F(*y)
        if np.max(np.abs(r)) < tol:
            break
        tracker.accept(orb)
        Jk = (F(y[0] + fd, y[1])[0] - F(y[0] - fd, y[1])[0]) / (2 * fd)
        Jb = (F(y[0], y[1] + fd)[0] - F(y[0], y[1] - fd)[0]) / (2 * fd)
        J = np.stack([Jk, Jb], axis=1)
        if abs(J[0, 1]) < 1e-6:
            raise ToolkitError("A_kb ~ 0: non-generic codim-2 candidate")
        try:
            y = y - np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            raise SingularSystem("codim-2 Newton system singular")
    else:
        raise NonConvergence("codim-2 polish did not converge")
    tracker.accept(orb)
    orb = tracker.current
    derivs = k_derivatives(orb, 3)
    ak, akk, akkk = diag.action_derivatives(orb, derivs)
    kappa = diag.kappa_from_bloch(orb) if with_kappa else np.nan
    params = dict(orb.model.params)
    return Codim2Point(orb, float(y[0]), params, akkk, kappa, ak, akk, second)


def continue_codim2(model: SystemModel, point: Codim2Point, third: str,
                    third_range, step: float = 0.005, n_steps: int = 40,
                    with_kappa: bool = False, tol: float = 1e-9) -> list:
    """Trace the codim-2 locus {A_k = 0, A_kk = 0} in (k, second, third).

    ``point.params`` names the second parameter implicitly through the model
    record; pass the remaining free parameter as ``third``.  Returns the
    sampled points; continuation stops at the range boundary (an exact
    clipped solve is appended) or on step collapse.
    """
    lo, hi = min(third_range), max(third_range)
    second = point.second_name
    if not second:
        raise ValueError("point lacks its second-parameter name")
    tracker = _OrbitTracker(point.orbit.model, point.orbit)

    def F(k, b, c):
        orb = tracker.solve(k, **{second: b, third: c})
        ak, akk = _ak_levels(orb, 2)
        return np.array([ak, akk]), orb

    fd = 1e-6

    def jac(y):
        cols = []
        for i in range(3):
            e = np.zeros(3)
            e[i] = fd
            cols.append((F(*(y + e))[0] - F(*(y - e))[0]) / (2 * fd))
        return np.stack(cols, axis=1)       # (2, 3)

    y = np.array([point.k, point.params[second], point.params[third]])
    J = jac(y)
    _, _, vt = np.linalg.svd(J)
    tan = vt[-1]
    if tan[2] * np.sign(step) < 0:
        tan = -tan
    h = abs(step)
    out = [point]

    while len(out) < n_steps:
        accepted = False
        while h >= 1e-8:
            y_pred = y + h * tan
            yy = y_pred.copy()
            ok = True
            for _ in range(14):
                r, orb = F(*yy)
                res = np.concatenate([r, [tan @ (yy - y_pred)]])
                if np.max(np.abs(res)) < tol:
                    break
                Jy = np.vstack([jac(yy), tan])
                try:
                    yy = yy - np.linalg.solve(Jy, res)
                except np.linalg.LinAlgError:
                    ok = False
                    break
            else:
                ok = False
            if ok:
                accepted = True
                break
            h *= 0.5
        if not accepted:
            break
        r, orb = F(*yy)
        tracker.accept(orb)
        orb = tracker.current
        derivs = k_derivatives(orb, 3)
        ak, akk, akkk = diag.action_derivatives(orb, derivs)
        kappa = diag.kappa_from_bloch(orb) if with_kappa else np.nan
        p = Codim2Point(orb, float(yy[0]), dict(orb.model.params), akkk,
                        kappa, ak, akk, second)
        out.append(p)
        Jn = jac(yy)
        _, _, vt = np.linalg.svd(Jn)
        t_new = vt[-1]
        if t_new @ tan < 0:
            t_new = -t_new
        y, tan = yy, t_new
        h = min(h * 1.3, abs(step) * 3)
        if not (lo <= y[2] <= hi):
            break

    # clip the final point exactly onto the boundary if it stepped past
    if out and not (lo <= out[-1].params[third] <= hi):
        target = lo if out[-1].params[third] < lo else hi
        base = out[-2] if len(out) > 1 else out[0]
        out[-1] = _solve_codim2(base.orbit.model.with_params(**{third: target}),
                                base.orbit, second, out[-1].k,
                                out[-1].params[second], with_kappa=with_kappa)
    return out


def hk_diagram(branch: Branch):
    """Table (k, H, A, A_k, class) along a branch plus critical-point marks."""
    ks = branch.column("param")
    rows = {
        "k": ks,
        "H": branch.column("H"),
        "A": branch.column("A"),
        "A_k": branch.column("A_k"),
        "floquet_class": branch.column("floquet_class"),
    }
    rows["critical"] = np.zeros(len(ks), dtype=bool)
    for i in branch.crossings("A_k", 0.0):
        rows["critical"][i] = True
    return rows
