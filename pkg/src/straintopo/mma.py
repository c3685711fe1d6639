"""Method of Moving Asymptotes for min/max problems with inequality constraints.

The worst-case objective is handled with the bound formulation::

    min z   s.t.  f_j(x) - z <= 0,  g_i(x) <= 0,  lo <= x <= hi

which maps directly onto Svanberg's standard MMA form with ``a0 = 1``,
``a_j = 1`` for objective branches and ``a_i = 0`` for constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

ASYINIT = 0.5
ASYINCR = 1.2
ASYDECR = 0.7
ALBEFA = 0.1
RAA0 = 1e-5
EPSIMIN = 1e-10
POLISH_TRIGGER = 5e-10
C_PENALTY = 1000.0
D_PENALTY = 1.0


class OptimizerError(ValueError):
    pass


@dataclass
class MinMaxProblem:
    """Objective branches and constraints evaluated at ``x``.

    ``f`` has shape (J,), ``df`` (J, n); ``g`` (M,), ``dg`` (M, n).
    """

    x: np.ndarray
    f: np.ndarray
    df: np.ndarray
    g: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dg: Optional[np.ndarray] = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.f = np.atleast_1d(np.asarray(self.f, dtype=float))
        self.df = np.atleast_2d(np.asarray(self.df, dtype=float))
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        if self.dg is None:
            self.dg = np.zeros((self.g.size, self.x.size))
        self.dg = np.asarray(self.dg, dtype=float).reshape(self.g.size, self.x.size)
        if self.f.size < 1 or self.df.shape != (self.f.size, self.x.size):
            raise OptimizerError("objective gradients do not match the variable count")
        for arr in (self.x, self.f, self.df, self.g, self.dg):
            if not np.all(np.isfinite(arr)):
                raise OptimizerError("non-finite optimizer input")


@dataclass
class MmaState:
    n: int
    move: float = 0.1
    lower: float = 0.0
    upper: float = 1.0
    iteration: int = 0
    low: Optional[np.ndarray] = None
    upp: Optional[np.ndarray] = None
    xold1: Optional[np.ndarray] = None
    xold2: Optional[np.ndarray] = None
    lam: Optional[np.ndarray] = None
    z: float = 0.0
    subproblem_residual: float = 0.0
    asymptote_min_gap: float = 0.01

    def __post_init__(self):
        if self.move <= 0:
            raise OptimizerError("move limit must be positive")


def mma_update(problem: MinMaxProblem, state: MmaState) -> np.ndarray:
    """One MMA step; returns the new design and updates ``state`` in place."""
    x = problem.x
    n = x.size
    if n != state.n:
        raise OptimizerError(f"state built for {state.n} variables, got {n}")
    J, M = problem.f.size, problem.g.size
    state.iteration += 1
    if state.xold1 is None:
        state.xold1 = x.copy()
        state.xold2 = x.copy()

    # a common shift keeps the branches non-negative without moving the argmin
    shift = min(0.0, float(problem.f.min()))
    fval = np.concatenate([problem.f - shift, problem.g])
    dfdx = np.vstack([problem.df, problem.dg])
    a = np.concatenate([np.ones(J), np.zeros(M)])
    m = J + M
    c = np.full(m, C_PENALTY)
    d = np.full(m, D_PENALTY)
    xmin = np.full(n, state.lower)
    xmax = np.full(n, state.upper)

    low, upp = _asymptotes(state, x, xmin, xmax)
    alfa = np.maximum.reduce([low + ALBEFA * (x - low), x - state.move * (xmax - xmin), xmin])
    beta = np.minimum.reduce([upp - ALBEFA * (upp - x), x + state.move * (xmax - xmin), xmax])

    xmami = np.maximum(xmax - xmin, 1e-5)
    ux1, xl1 = upp - x, x - low
    ux2, xl2 = ux1 ** 2, xl1 ** 2
    # f0 = 0: only the regularization terms remain in p0, q0
    p0 = (RAA0 / xmami) * ux2
    q0 = (RAA0 / xmami) * xl2
    P = np.maximum(dfdx, 0.0)
    Q = np.maximum(-dfdx, 0.0)
    PQ = 0.001 * (P + Q) + RAA0 / xmami
    P = (P + PQ) * ux2
    Q = (Q + PQ) * xl2
    b = P @ (1.0 / ux1) + Q @ (1.0 / xl1) - fval

    sol = _subsolv(m, n, EPSIMIN, low, upp, alfa, beta, p0, q0, P, Q, 1.0, a, b, c, d)
    xnew = sol["x"]
    state.xold2, state.xold1 = state.xold1, x.copy()
    state.low, state.upp = low, upp
    state.lam = sol["lam"]
    state.z = sol["z"] + shift
    state.subproblem_residual = sol["residual"]
    return np.clip(xnew, np.maximum(xmin, x - state.move), np.minimum(xmax, x + state.move))


def _asymptotes(state: MmaState, x, xmin, xmax):
    span = xmax - xmin
    if state.iteration <= 2 or state.low is None:
        return x - ASYINIT * span, x + ASYINIT * span
    xold1, xold2 = state.xold1, state.xold2
    zzz = (x - xold1) * (xold1 - xold2)
    factor = np.ones_like(x)
    factor[zzz > 0] = ASYINCR
    factor[zzz < 0] = ASYDECR
    low = x - factor * (xold1 - state.low)
    upp = x + factor * (state.upp - xold1)
    gap = state.asymptote_min_gap
    low = np.clip(low, x - 10.0 * span, x - gap * span)
    upp = np.clip(upp, x + gap * span, x + 10.0 * span)
    return low, upp


def _kkt_residual(sub, x, y, z, lam, xsi, eta, mu, zet, s, epsi):
    """Perturbed KKT residual of the subproblem (``epsi = 0``: the exact conditions)."""
    low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d = sub
    ux1, xl1 = upp - x, x - low
    plam = p0 + P.T @ lam
    qlam = q0 + Q.T @ lam
    gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
    dpsidx = plam / ux1 ** 2 - qlam / xl1 ** 2
    return np.concatenate([
        dpsidx - xsi + eta,
        c + d * y - mu - lam,
        [a0 - zet - a @ lam],
        gvec - a * z - y + s - b,
        xsi * (x - alfa) - epsi,
        eta * (beta - x) - epsi,
        mu * y - epsi,
        [zet * z - epsi],
        lam * s - epsi,
    ])


def _subsolv(m, n, epsimin, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d):
    """Primal-dual interior point solution of the convex MMA subproblem.

    When the interior point iteration stalls short of ``POLISH_TRIGGER`` the
    point is refined on the dual (see :func:`_dual_polish`).
    """
    sub = (low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d)
    een, eem = np.ones(n), np.ones(m)
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = eem.copy()
    z = 1.0
    lam = eem.copy()
    xsi = np.maximum(een / (x - alfa), een)
    eta = np.maximum(een / (beta - x), een)
    mu = np.maximum(eem, 0.5 * c)
    zet = 1.0
    s = eem.copy()

    while epsi > epsimin:
        res = _kkt_residual(sub, x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        resnorm = np.linalg.norm(res)
        resmax = np.max(np.abs(res))
        inner = 0
        while resmax > 0.9 * epsi and inner < 200:
            inner += 1
            ux1, xl1 = upp - x, x - low
            ux2, xl2 = ux1 ** 2, xl1 ** 2
            ux3, xl3 = ux1 * ux2, xl1 * xl2
            plam = p0 + P.T @ lam
            qlam = q0 + Q.T @ lam
            gvec = P @ (1.0 / ux1) + Q @ (1.0 / xl1)
            GG = P / ux2 - Q / xl2
            dpsidx = plam / ux2 - qlam / xl2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2.0 * (plam / ux3 + qlam / xl3) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1.0 / diagy
            if m < n:
                blam = dellam + dely / diagy - GG @ (delx / diagx)
                Alam = np.diag(diaglamyi) + (GG / diagx) @ GG.T
                AA = np.block([[Alam, a[:, None]], [a[None, :], np.array([[-zet / z]])]])
                sol = np.linalg.solve(AA, np.concatenate([blam, [delz]]))
                dlam, dz = sol[:m], sol[m]
                dx = -delx / diagx - (GG.T @ dlam) / diagx
            else:
                diaglamyiinv = 1.0 / diaglamyi
                dellamyi = dellam + dely / diagy
                Axx = np.diag(diagx) + (GG.T * diaglamyiinv) @ GG
                azz = zet / z + a @ (a / diaglamyi)
                axz = -GG.T @ (a / diaglamyi)
                bx = delx + GG.T @ (dellamyi / diaglamyi)
                bz = delz - a @ (dellamyi / diaglamyi)
                AA = np.block([[Axx, axz[:, None]], [axz[None, :], np.array([[azz]])]])
                sol = np.linalg.solve(AA, -np.concatenate([bx, [bz]]))
                dx, dz = sol[:n], sol[n]
                dlam = (GG @ dx) / diaglamyi - dz * (a / diaglamyi) + dellamyi / diaglamyi
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - (xsi * dx) / (x - alfa)
            deta = -eta + epsi / (beta - x) + (eta * dx) / (beta - x)
            dmu = -mu + epsi / y - (mu * dy) / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - (s * dlam) / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stmxx = np.max(-1.01 * dxx / xx)
            stmalfa = np.max(-1.01 * dx / (x - alfa))
            stmbeta = np.max(1.01 * dx / (beta - x))
            steg = 1.0 / max(stmalfa, stmbeta, stmxx, 1.0)

            old = (x, y, z, lam, xsi, eta, mu, zet, s)
            resinew = 2.0 * resnorm
            tries = 0
            while resinew > resnorm and tries < 50:
                tries += 1
                x = old[0] + steg * dx
                y = old[1] + steg * dy
                z = old[2] + steg * dz
                lam = old[3] + steg * dlam
                xsi = old[4] + steg * dxsi
                eta = old[5] + steg * deta
                mu = old[6] + steg * dmu
                zet = old[7] + steg * dzet
                s = old[8] + steg * ds
                res = _kkt_residual(sub, x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                resinew = np.linalg.norm(res)
                steg *= 0.5
            resnorm = resinew
            resmax = np.max(np.abs(res))
        epsi *= 0.1
    out = {"x": x, "y": y, "z": z, "lam": lam,
           "residual": float(np.max(np.abs(_kkt_residual(sub, x, y, z, lam, xsi, eta, mu, zet, s, 0.0))))}
    if out["residual"] > POLISH_TRIGGER:
        polished = _dual_polish(sub, x, lam, s, z, zet, xsi, eta)
        if polished is not None and polished["residual"] < out["residual"]:
            out = polished
    return out


def _active_point(sub, x, lam, z, act, face, xfix):
    """KKT quantities and active-set equations at (x, lam, z).

    ``xfix`` is -1/+1 for variables held at alfa/beta and 0 for free ones;
    ``act`` marks constraints held as equalities and ``face`` the bound
    ``a @ lam = a0`` (its multiplier is z).
    """
    low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d = sub
    ux1, xl1 = upp - x, x - low
    if np.any(ux1 <= 0.0) or np.any(xl1 <= 0.0):
        return None
    plam = p0 + P.T @ lam
    qlam = q0 + Q.T @ lam
    dpsidx = plam / ux1 ** 2 - qlam / xl1 ** 2
    curv = 2.0 * (plam / ux1 ** 3 + qlam / xl1 ** 3)
    y = np.maximum(0.0, (lam - c) / d)
    slack = b + y + a * z - (P @ (1.0 / ux1) + Q @ (1.0 / xl1))
    free = xfix == 0
    eqs = [dpsidx[free], -slack[act]]
    if face:
        eqs.append([a[act] @ lam[act] - a0])
    return {"x": x, "y": y, "z": z, "lam": lam, "slack": slack, "free": free, "curv": curv,
            "G": P / ux1 ** 2 - Q / xl1 ** 2, "dpsidx": dpsidx, "zet": a0 - a @ lam,
            "mu": c + d * y - lam, "e": np.concatenate(eqs)}


def _active_newton(sub, x, lam, z, act, face, xfix, tol=1e-14, maxit=50):
    """Newton on the KKT equalities of a fixed active set.

    Free x are eliminated through their diagonal block, which leaves a system
    of the size of the active set (the dual Hessian).
    """
    alfa, beta, a0, a, b, d = sub[2], sub[3], sub[8], sub[9], sub[10], sub[12]
    idx = np.flatnonzero(act)
    k = idx.size
    scale = max(1.0, float(np.max(np.abs(b))))
    x = np.where(xfix < 0, alfa, np.where(xfix > 0, beta, x))
    lam = np.where(act, lam, 0.0)
    z = z if face else 0.0
    pt = _active_point(sub, x, lam, z, act, face, xfix)
    if pt is None:
        return None
    for _ in range(maxit):
        norm = np.linalg.norm(pt["e"], np.inf) if pt["e"].size else 0.0
        if norm <= tol * scale:
            return pt
        free = pt["free"]
        rx = pt["dpsidx"][free]
        cf = pt["curv"][free]
        GA = pt["G"][np.ix_(idx, np.flatnonzero(free))]
        # constraint rows after eliminating dx = -(rx + GA^T dlam) / cf
        H = -(GA / cf) @ GA.T - np.diag((pt["y"][idx] > 0) / d[idx])
        rhs = pt["slack"][idx] + GA @ (rx / cf)
        if face:
            H = np.block([[H, -a[idx][:, None]], [a[idx][None, :], np.zeros((1, 1))]])
            rhs = np.append(rhs, a0 - a[idx] @ lam[idx])
        sol = np.linalg.lstsq(H, rhs, rcond=None)[0]
        dlam = sol[:k]
        dz = sol[k] if face else 0.0
        dx = np.zeros_like(x)
        dx[free] = -(rx + GA.T @ dlam) / cf
        t, accepted = 1.0, False
        for _ in range(40):
            tl = lam.copy()
            tl[idx] += t * dlam
            tp = _active_point(sub, x + t * dx, tl, z + t * dz, act, face, xfix)
            if tp is not None and np.linalg.norm(tp["e"], np.inf) < norm:
                x, lam, z, pt, accepted = tp["x"], tl, z + t * dz, tp, True
                break
            t *= 0.5
        if not accepted:
            break
    norm = np.linalg.norm(pt["e"], np.inf) if pt["e"].size else 0.0
    return pt if norm <= 1e3 * tol * scale else None


def _bound_status_solve(sub, x, lam, z, act, face, xfix, maxit=20):
    """Solve one constraint active set, updating which x sit on their bounds.

    Free variables that leave the box are fixed at the violated bound and
    fixed ones whose bound multiplier has the wrong sign are released.
    """
    alfa, beta = sub[2], sub[3]
    tol = 1e-12
    seen = set()
    for _ in range(maxit):
        pt = _active_newton(sub, x, lam, z, act, face, xfix)
        if pt is None:
            return None
        xk, g, free = pt["x"], pt["dpsidx"], pt["free"]
        new = xfix.copy()
        new[free & (xk < alfa)] = -1
        new[free & (xk > beta)] = 1
        new[(xfix < 0) & (g < -tol)] = 0
        new[(xfix > 0) & (g > tol)] = 0
        if np.array_equal(new, xfix):
            pt["xfix"] = xfix
            return pt
        key = new.tobytes()
        if key in seen:
            return None
        seen.add(key)
        xfix = new
        x, lam, z = np.clip(xk, alfa, beta), np.maximum(pt["lam"], 0.0), pt["z"]
    return None


def _dual_polish(sub, x, lam, s, z, zet, xsi, eta):
    """Active-set refinement of an interior point iterate.

    For a fixed active set the KKT conditions are a smooth square system.
    Active sets are tried in order of distance from the interior point's
    guess; the first solution that satisfies every sign condition is the KKT
    point of the (convex) subproblem.
    """
    low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d = sub
    m = lam.size
    has_face = bool(np.any(a > 0))
    guess = np.append(lam > s, has_face and z > zet)
    nbits = m + 1 if has_face else m
    masks = ((np.arange(2 ** nbits)[:, None] >> np.arange(nbits)) & 1).astype(bool)
    order = np.argsort(np.sum(masks != guess[:nbits], axis=1), kind="stable")
    lam0 = np.maximum(lam, 0.0)
    # starting bound status of x: clipping of the closed-form minimizer at the
    # interior point's multipliers, then the interior point's own guess
    sp, sq = np.sqrt(p0 + P.T @ lam0), np.sqrt(q0 + Q.T @ lam0)
    xu = (sp * low + sq * upp) / (sp + sq)
    starts = [np.where(xu <= alfa, -1, np.where(xu >= beta, 1, 0)),
              np.where(xsi > x - alfa, -1, np.where(eta > beta - x, 1, 0))]
    if np.array_equal(starts[0], starts[1]):
        starts.pop()
    tol = 1e-12
    for mask in masks[order]:
        act, face = mask[:m], bool(mask[m]) if has_face else False
        for fix0 in starts:
            pt = _bound_status_solve(sub, x, lam0, z, act, face, fix0)
            if pt is None:
                continue
            xk, lk, zk, xfix, g = pt["x"], pt["lam"], pt["z"], pt["xfix"], pt["dpsidx"]
            if np.any(lk[act] < 0.0) or (face and zk < 0.0) or (not face and pt["zet"] < -tol):
                continue
            if np.any(pt["slack"][~act] < -tol):
                continue
            xsi_k = np.where(xfix < 0, np.maximum(g, 0.0), 0.0)
            eta_k = np.where(xfix > 0, np.maximum(-g, 0.0), 0.0)
            s_k = np.where(act, 0.0, np.maximum(pt["slack"], 0.0))
            zet_k = 0.0 if face else pt["zet"]
            res = _kkt_residual(sub, xk, pt["y"], zk, lk, xsi_k, eta_k, pt["mu"], zet_k, s_k, 0.0)
            return {"x": xk, "y": pt["y"], "z": zk, "lam": lk, "residual": float(np.max(np.abs(res)))}
    return None


@dataclass(frozen=True)
class KktReport:
    measure: float
    max_violation: float
    multipliers: np.ndarray
    worst_branch: int


def kkt_report(problem: MinMaxProblem, state: Optional[MmaState] = None, tol: float = 1e-9) -> KktReport:
    """Projected-gradient norm of the aggregated Lagrangian and constraint violation.

    Multipliers come from the last subproblem when available; otherwise the
    worst branch carries weight 1 and constraints 0.
    """
    J, M = problem.f.size, problem.g.size
    if state is not None and state.lam is not None and state.lam.size == J + M:
        mult = np.asarray(state.lam, dtype=float)
        branch = mult[:J]
        if branch.sum() > 0:
            mult = np.concatenate([branch / branch.sum(), mult[J:]])
    else:
        mult = np.zeros(J + M)
        mult[int(np.argmax(problem.f))] = 1.0
    grad = mult[:J] @ problem.df + (mult[J:] @ problem.dg if M else 0.0)
    x = problem.x
    lo = state.lower if state is not None else 0.0
    hi = state.upper if state is not None else 1.0
    pg = np.where(x <= lo + tol, np.minimum(grad, 0.0), np.where(x >= hi - tol, np.maximum(grad, 0.0), grad))
    viol = float(np.max(np.maximum(problem.g, 0.0))) if M else 0.0
    return KktReport(float(np.linalg.norm(pg, np.inf)), viol, mult, int(np.argmax(problem.f)))
