"""Stable/unstable cylindrical foliations by shooting, their traces in a
Poincare section, intersection counting, asymptotic phases, and assembly of
predictor connections.

A leaf is launched from the orbit point at phase theta, displaced by delta
along the (transported) stable or unstable Floquet eigendirection, and flown
to the first oriented section crossing; stable-side leaves fly the reversed
field.  Advancing theta over a full period traces a closed curve in the
section for each foliation; transversal intersections of the two curves
enumerate the connection candidates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diagnostics as diag
from .numerics import (BlowUp, NoCrossing, Section, ToolkitError, integrate,
                       integrate_to_section)
from .orbit import PeriodicOrbit

__all__ = [
    "Leaf", "SectionCurve", "ConnectionCandidate", "IntersectionRecord",
    "shoot_leaf", "trace_foliation", "intersect_curves", "refine_intersection",
    "asymptotic_phase", "assemble_connection", "negate_orbit",
    "default_x_max", "probe_direction_sign",
]


def negate_orbit(orbit: PeriodicOrbit) -> PeriodicOrbit:
    """The symmetry partner -u of an orbit of an odd-nonlinearity model."""
    out = PeriodicOrbit(orbit.model, orbit.k, -orbit.profile, orbit.drift,
                        -orbit.reference)
    if out.residual_sup() > 1e-7:
        raise ToolkitError("model lacks the u -> -u symmetry")
    return out


def default_x_max(orbit: PeriodicOrbit, fl, delta: float) -> float:
    """Span long enough for a delta-perturbation to grow through the core."""
    lam = fl.lambda_unstable
    if not np.isfinite(lam) or lam <= 1.0:
        raise ToolkitError("leaf shooting needs a hyperbolic orbit")
    rate = np.log(lam) / orbit.period
    return float(np.log(10.0 / delta) / rate + 10.0 * orbit.period)


@dataclass
class Leaf:
    orbit: PeriodicOrbit
    theta: float
    side: str
    sign: int
    launch: np.ndarray
    hit: np.ndarray
    x_hit: float                  # integration length to the section (> 0)
    trajectory: object = None

    @property
    def x_signed(self) -> float:
        """Section position in original time relative to the launch point."""
        return self.x_hit if self.side == "unstable" else -self.x_hit


def shoot_leaf(orbit: PeriodicOrbit, fl, theta: float, side: str,
               section: Section, delta: float = 1e-8,
               x_max: float | None = None, sign: int = 1,
               tol: float = 1e-10, keep_trajectory: bool = True) -> Leaf:
    """Launch one leaf and fly it to the section.

    ``fl`` is the orbit's Floquet data; ``sign`` selects the manifold branch
    (see ``probe_direction_sign``).
    """
    if side not in ("stable", "unstable"):
        raise ValueError("side must be 'stable' or 'unstable'")
    if fl.floquet_class == "inverse-hyperbolic":
        raise ToolkitError("leaf shooting refused: inverse-hyperbolic orbit "
                           "(eigendirection sign is not phase-continuous)")
    if fl.floquet_class != "hyperbolic":
        raise ToolkitError(f"leaf shooting needs a hyperbolic orbit "
                           f"(got {fl.floquet_class})")
    if x_max is None:
        x_max = default_x_max(orbit, fl, delta)
    v = fl.direction(theta, side)
    launch = orbit.embed(float(theta)) + sign * delta * v
    hit, xh, traj = integrate_to_section(orbit.model, launch, section, x_max,
                                         tol=tol, forward=(side == "unstable"))
    return Leaf(orbit, float(theta) % (2 * np.pi), side, sign, launch, hit,
                xh, traj if keep_trajectory else None)


def probe_direction_sign(orbit: PeriodicOrbit, fl, side: str, section: Section,
                         delta: float = 1e-8, x_max: float | None = None,
                         theta: float = 0.0) -> int:
    """Branch whose first section crossing occurs sooner (the facing one)."""
    best = None
    for sign in (1, -1):
        try:
            leaf = shoot_leaf(orbit, fl, theta, side, section, delta,
                              x_max, sign, keep_trajectory=False)
        except (NoCrossing, BlowUp):
            continue
        if best is None or leaf.x_hit < best[1]:
            best = (sign, leaf.x_hit)
    if best is None:
        raise NoCrossing("neither manifold branch reaches the section")
    return best[0]


@dataclass
class SectionCurve:
    """Trace of one foliation in the section, ordered by source phase."""

    side: str
    section: Section
    thetas: np.ndarray
    hits: np.ndarray              # (N, 4)
    x_hits: np.ndarray
    closed: bool
    max_gap_fraction: float
    _shooter: object = None

    def __len__(self):
        return len(self.thetas)

    def diameter(self) -> float:
        lo = self.hits.min(axis=0)
        hi = self.hits.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def gaps(self) -> np.ndarray:
        d = np.diff(self.hits, axis=0)
        wrap = self.hits[0] - self.hits[-1]
        return np.concatenate([np.linalg.norm(d, axis=1),
                               [np.linalg.norm(wrap)]])

    def hit_at(self, theta: float) -> np.ndarray:
        if self._shooter is None:
            raise ToolkitError("curve was built without a re-shooting handle")
        return self._shooter(theta).hit


def trace_foliation(orbit: PeriodicOrbit, side: str, section: Section,
                    fl=None, n_theta: int = 256, delta: float = 1e-8,
                    x_max: float | None = None, refine_passes: int = 4,
                    gap_fraction: float = 0.01, leaf_budget: int = 2000,
                    tol: float = 1e-10) -> SectionCurve:
    """Trace one foliation over a full period of source phases.

    Phases are refined adaptively where consecutive hits are farther apart
    than ``gap_fraction`` of the curve diameter; if refinement cannot close
    the gaps (an inverse-hyperbolic orbit distorting the trace, say) the
    curve is flagged non-closed rather than rejected.
    """
    if n_theta < 64:
        raise ValueError("need at least 64 leaves for a meaningful trace")
    if fl is None:
        fl = diag.floquet(orbit)
    if x_max is None:
        x_max = default_x_max(orbit, fl, delta)
    sign = probe_direction_sign(orbit, fl, side, section, delta, x_max)

    def shooter(theta):
        return shoot_leaf(orbit, fl, theta, side, section, delta, x_max,
                          sign, tol, keep_trajectory=False)

    leaves = {}
    for th in 2 * np.pi * np.arange(n_theta) / n_theta:
        try:
            leaves[th] = shooter(th)
        except (NoCrossing, BlowUp):
            pass
    if len(leaves) < n_theta // 2:
        raise NoCrossing("most leaves failed to reach the section")
    shots = n_theta

    for _ in range(refine_passes):
        ths = sorted(leaves)
        hits = np.array([leaves[t].hit for t in ths])
        diam = float(np.linalg.norm(hits.max(axis=0) - hits.min(axis=0)))
        inserts = []
        for i in range(len(ths)):
            j = (i + 1) % len(ths)
            gap = np.linalg.norm(hits[j] - hits[i])
            if gap > gap_fraction * diam:
                tmid = (ths[i] + (((ths[j] - ths[i]) % (2 * np.pi)) / 2)) % (2 * np.pi)
                inserts.append(tmid)
        inserts = [t for t in inserts if t not in leaves]
        if not inserts or shots + len(inserts) > leaf_budget:
            break
        for tmid in inserts:
            try:
                leaves[tmid] = shooter(tmid)
            except (NoCrossing, BlowUp):
                pass
            shots += 1

    ths = np.array(sorted(leaves))
    hits = np.array([leaves[t].hit for t in ths])
    xh = np.array([leaves[t].x_hit for t in ths])
    diam = float(np.linalg.norm(hits.max(axis=0) - hits.min(axis=0)))
    gaps = np.concatenate([np.linalg.norm(np.diff(hits, axis=0), axis=1),
                           [np.linalg.norm(hits[0] - hits[-1])]])
    max_frac = float(gaps.max() / diam) if diam > 0 else 0.0
    med = float(np.median(gaps))
    closed = bool(gaps.max() <= max(4.0 * med, 0.03 * diam))
    return SectionCurve(side, section, ths, hits, xh, closed, max_frac, shooter)


# -- intersection -------------------------------------------------------------

@dataclass
class IntersectionRecord:
    point: np.ndarray            # phase-space point (midpoint of the two legs)
    theta_unstable: float
    theta_stable: float
    gap: float                   # full-space distance between the two legs
    tangential: bool = False


def _pca_plane(points: np.ndarray):
    ctr = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - ctr, full_matrices=False)
    return ctr, vt[:2]


def _segment_intersections(pa, pb):
    """(i, j, s, t, tangential) for crossings of two closed 2D polylines."""
    na = len(pa)
    a0, a1 = pa, np.roll(pa, -1, axis=0)
    b0, b1 = pb, np.roll(pb, -1, axis=0)
    da, db = a1 - a0, b1 - b0
    out = []
    for i in range(na):
        d = b0 - a0[i]                          # (nb, 2)
        denom = da[i, 0] * db[:, 1] - da[i, 1] * db[:, 0]
        near = np.abs(denom) > 1e-14
        dn = np.where(near, denom, 1.0)
        s = (d[:, 0] * db[:, 1] - d[:, 1] * db[:, 0]) / dn
        t = (d[:, 0] * da[i, 1] - d[:, 1] * da[i, 0]) / (-dn)
        ok = near & (s >= 0) & (s < 1) & (t >= 0) & (t < 1)
        for j in np.nonzero(ok)[0]:
            scale = np.linalg.norm(da[i]) * np.linalg.norm(db[j]) + 1e-300
            out.append((i, int(j), float(s[j]), float(t[j]),
                        bool(abs(denom[j]) < 1e-3 * scale)))
    return out


def _theta_interp(thetas, i, s):
    th0 = thetas[i]
    th1 = thetas[(i + 1) % len(thetas)]
    span = (th1 - th0) % (2 * np.pi)
    return float((th0 + s * span) % (2 * np.pi))


def intersect_curves(curve_u: SectionCurve, curve_s: SectionCurve,
                     refine: bool = True, gap_tol: float = 1e-4):
    """Transversal intersections of two foliation traces.

    The hit clouds are projected onto the leading 2D principal plane of the
    section coordinates, crossings of the two closed polylines are found
    there, and each is validated (and, with shooting handles available,
    Gauss-Newton refined in the source phases) in the full phase space.
    Records with a leg separation above ``gap_tol`` are dropped as spurious.
    The number of surviving records is the connection multiplicity.
    """
    if curve_u is curve_s or (curve_u.hits.shape == curve_s.hits.shape
                              and np.allclose(curve_u.hits, curve_s.hits)):
        raise ValueError("identical curves have no isolated intersections")
    basis = curve_u.section.basis()
    pu3 = curve_u.hits @ basis.T
    ps3 = curve_s.hits @ basis.T
    ctr, plane = _pca_plane(np.vstack([pu3, ps3]))
    pu = (pu3 - ctr) @ plane.T
    ps = (ps3 - ctr) @ plane.T
    records = []
    for i, j, s, t, tangential in _segment_intersections(pu, ps):
        th_u = _theta_interp(curve_u.thetas, i, s)
        th_s = _theta_interp(curve_s.thetas, j, t)
        a = (1 - s) * curve_u.hits[i] + s * curve_u.hits[(i + 1) % len(curve_u)]
        b = (1 - t) * curve_s.hits[j] + t * curve_s.hits[(j + 1) % len(curve_s)]
        rec = IntersectionRecord(0.5 * (a + b), th_u, th_s,
                                 float(np.linalg.norm(a - b)), tangential)
        if refine and curve_u._shooter is not None and curve_s._shooter is not None:
            rec = refine_intersection(curve_u, curve_s, rec)
        if rec.gap <= gap_tol:
            records.append(rec)
    records.sort(key=lambda r: r.theta_unstable)
    return records


def refine_intersection(curve_u: SectionCurve, curve_s: SectionCurve,
                        rec: IntersectionRecord, max_iter: int = 12) -> IntersectionRecord:
    """Gauss-Newton on the two source phases minimizing the leg separation."""
    basis = curve_u.section.basis()

    def legs(th_u, th_s):
        return (curve_u.hit_at(th_u) @ basis.T, curve_s.hit_at(th_s) @ basis.T)

    th_u, th_s = rec.theta_unstable, rec.theta_stable
    a, b = legs(th_u, th_s)
    r = a - b
    gap = np.linalg.norm(r)
    h = 1e-6
    for _ in range(max_iter):
        if gap < 5e-9:
            break
        ap, _ = legs(th_u + h, th_s)
        _, bp = legs(th_u, th_s + h)
        J = np.stack([(ap - a) / h, -(bp - b) / h], axis=1)   # (3, 2)
        dth, *_ = np.linalg.lstsq(J, -r, rcond=None)
        step = 1.0
        while step > 1e-3:
            tu, ts = th_u + step * dth[0], th_s + step * dth[1]
            a2, b2 = legs(tu, ts)
            g2 = np.linalg.norm(a2 - b2)
            if g2 < gap:
                th_u, th_s, a, b, gap = tu, ts, a2, b2, g2
                r = a - b
                break
            step *= 0.5
        else:
            break
    pu = curve_u.hit_at(th_u)
    ps = curve_s.hit_at(th_s)
    return IntersectionRecord(0.5 * (pu + ps), th_u % (2 * np.pi),
                              th_s % (2 * np.pi),
                              float(np.linalg.norm(pu - ps)), rec.tangential)


# -- asymptotic phase and assembly -------------------------------------------

def asymptotic_phase(leaf: Leaf, fl=None, n_periods: float = 4.0,
                     rate_check: bool = True):
    """Phase theta with trajectory -> orbit(k x + theta) at its infinity.

    theta minimizes the distance between the leaf trajectory and the
    phase-shifted orbit over the window nearest the orbit, with x = 0 placed
    at the section hit.  The fitted exponential approach rate must match
    log(multiplier)/period to 10 percent.  Returns ``(theta, rate)``.
    """
    orbit = leaf.orbit
    if leaf.trajectory is None:
        raise ToolkitError("leaf was shot without a stored trajectory")
    k, T = orbit.k, orbit.period
    tau_end = min(n_periods * T, 0.45 * leaf.x_hit)
    taus = np.linspace(0.0, tau_end, max(40, int(20 * tau_end / T)))
    ys = leaf.trajectory.at(taus)
    sgn = 1.0 if leaf.side == "unstable" else -1.0
    xs = sgn * (taus - leaf.x_hit)   # original time relative to the section

    thetas = np.linspace(0, 2 * np.pi, 256, endpoint=False)
    emb = orbit.embed((k * xs)[None, :] + thetas[:, None])
    cost = np.sum(np.linalg.norm(emb - ys[None, :, :], axis=2)**2, axis=1)
    i0 = int(np.argmin(cost))
    cm, c0, cp = cost[(i0 - 1) % 256], cost[i0], cost[(i0 + 1) % 256]
    dth = 2 * np.pi / 256
    denom = cm - 2 * c0 + cp
    shift = 0.5 * (cm - cp) / denom * dth if denom > 0 else 0.0
    theta = float((thetas[i0] + shift) % (2 * np.pi))

    dists = np.linalg.norm(orbit.embed(k * xs + theta) - ys, axis=1)
    good = dists > 1e-14
    if np.count_nonzero(good) < 5 or not np.all(dists[good] < 1.0):
        raise ToolkitError("no clean decay toward the orbit detected")
    rate = float(np.polyfit(taus[good], np.log(dists[good]), 1)[0])
    if rate_check:
        if fl is None:
            fl = diag.floquet(orbit)
        expected = np.log(fl.lambda_unstable) / T
        if not np.isfinite(rate) or abs(abs(rate) - expected) > 0.10 * expected:
            raise ToolkitError(f"approach rate {rate:.4f} inconsistent with "
                               f"Floquet rate {expected:.4f}")
    return theta, rate


@dataclass
class ConnectionCandidate:
    orbit_minus: PeriodicOrbit
    orbit_plus: PeriodicOrbit
    section_point: np.ndarray
    theta_minus: float
    theta_plus: float
    x: np.ndarray
    states: np.ndarray
    delta_action: float
    gap: float
    tail_distance_minus: np.ndarray
    tail_distance_plus: np.ndarray

    @property
    def k_minus(self) -> float:
        return self.orbit_minus.k

    @property
    def k_plus(self) -> float:
        return self.orbit_plus.k


class _Reversed:
    def __init__(self, model):
        self._m = model

    def rhs(self, y):
        return -self._m.rhs(y)

    def __getattr__(self, name):
        return getattr(self._m, name)


def _leg_trajectory(model, p0, orbit, fl, gap, forward, tol):
    """Flow from the section point toward one infinity.

    The usable span is limited by the growth of the off-manifold error
    (the intersection gap): beyond x ~ log(0.1/gap)/rate the leg departs.
    Returns (taus, states, best phase, distances to the shifted orbit).
    """
    rate = np.log(fl.lambda_unstable) / orbit.period
    floor = max(gap, 1e-12)
    x_use = np.log(0.05 / floor) / rate
    x_cap = max(x_use, 1.5 * orbit.period)
    flow = model if forward else _Reversed(model)
    traj = integrate(flow, p0, (0.0, x_cap), tol=tol)
    taus = np.linspace(0.0, x_cap, max(240, int(24 * x_cap / orbit.period)))
    ys = traj.at(taus)
    sgn = 1.0 if forward else -1.0
    win = (taus >= min(0.4 * x_cap, x_cap - 2 * orbit.period))
    ths = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    emb = orbit.embed((orbit.k * sgn * taus[win])[None, :] + ths[:, None])
    cost = np.sum(np.linalg.norm(emb - ys[win][None], axis=2)**2, axis=1)
    theta = float(ths[int(np.argmin(cost))])
    d = np.linalg.norm(ys - orbit.embed(orbit.k * sgn * taus + theta), axis=1)
    i_min = int(np.argmin(d))
    return taus[:i_min + 1], ys[:i_min + 1], theta, d[:i_min + 1]


def assemble_connection(rec: IntersectionRecord, orbit_minus: PeriodicOrbit,
                        orbit_plus: PeriodicOrbit, fl_minus=None, fl_plus=None,
                        tol: float = 1e-10) -> ConnectionCandidate:
    """Concatenate backward and forward flows through a refined intersection
    point into one candidate trajectory.

    The backward leg approaches ``orbit_minus`` (the unstable-side orbit),
    the forward leg ``orbit_plus``; each is truncated where its approach
    bottoms out, which is set by how exactly the intersection point sits on
    both manifolds.
    """
    model = orbit_minus.model
    if fl_minus is None:
        fl_minus = diag.floquet(orbit_minus)
    if fl_plus is None:
        fl_plus = diag.floquet(orbit_plus)
    p0 = np.asarray(rec.point, float)

    xs_m, ys_m, theta_minus, dm = _leg_trajectory(model, p0, orbit_minus,
                                                  fl_minus, rec.gap, False, tol)
    xs_p, ys_p, theta_plus, dp = _leg_trajectory(model, p0, orbit_plus,
                                                 fl_plus, rec.gap, True, tol)
    x = np.concatenate([-xs_m[::-1], xs_p[1:]])
    states = np.vstack([ys_m[::-1], ys_p[1:]])
    return ConnectionCandidate(orbit_minus, orbit_plus, p0, theta_minus,
                               theta_plus, x, states,
                               diag.action_jump(orbit_minus, orbit_plus),
                               rec.gap, dm, dp)
