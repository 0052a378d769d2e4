"""Global solver for  min w'Pw + 2p'w  s.t.  w'Qw + 2p'w = 0  with P, Q PSD.

P is ridged and used to whiten the pencil; in the eigenbasis of the whitened Q
the stationarity system (P + mu Q) w = -(1 + mu) p decouples and the
constraint becomes a rational (secular) function of the multiplier mu with
poles at -1/q_i.  On the principal interval mu > -1/q_max the pencil is PSD,
the secular function is strictly decreasing, and its root is the global
minimiser.  Other inter-pole intervals can optionally be scanned as well.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cholesky, eigh, solve_triangular
from scipy.optimize import brentq

DEFAULT_TOL = 1e-8


class IllConditioned(RuntimeError):
    pass


class NonPsdInput(ValueError):
    pass


@dataclass(frozen=True)
class QcqpProblem:
    P: np.ndarray
    Q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        s = p.size
        if P.shape != (s, s) or Q.shape != (s, s):
            raise ValueError(f"shapes P{P.shape}, Q{Q.shape}, p({s},) disagree")
        for name, M in (("P", P), ("Q", Q)):
            scale = max(1.0, float(np.abs(M).max(initial=0.0)))
            if np.abs(M - M.T).max(initial=0.0) > 1e-10 * scale:
                raise NonPsdInput(f"{name} is not symmetric")
            if s and np.linalg.eigvalsh(0.5 * (M + M.T))[0] < -1e-8 * scale:
                raise NonPsdInput(f"{name} has a negative eigenvalue")
        object.__setattr__(self, "P", 0.5 * (P + P.T))
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))
        object.__setattr__(self, "p", p)

    def objective(self, w: np.ndarray) -> float:
        return float(w @ self.P @ w + 2 * w @ self.p)

    def constraint(self, w: np.ndarray) -> float:
        return float(w @ self.Q @ w + 2 * w @ self.p)


@dataclass(frozen=True)
class QcqpSolution:
    w: np.ndarray
    objective: float
    constraint_residual: float
    stationary_points_examined: int
    multiplier: float = float("nan")


def _whiten(P: np.ndarray, Q: np.ndarray, p: np.ndarray):
    s = p.size
    tr = np.trace(P)
    eps = 1e-8 * tr / s if tr > 0 else 1e-8 * max(np.trace(Q) / s, 1.0)
    for _ in range(6):
        try:
            L = cholesky(P + eps * np.eye(s), lower=True)
            break
        except LinAlgError:
            eps *= 100.0
    else:
        raise IllConditioned("Cholesky factorisation of the ridged P failed")
    Linv = solve_triangular(L, np.eye(s), lower=True)
    Qt = Linv @ Q @ Linv.T
    Qt = 0.5 * (Qt + Qt.T)
    q, U = eigh(Qt)
    if not np.all(np.isfinite(q)):
        raise IllConditioned("whitened pencil has non-finite eigenvalues")
    q = np.maximum(q, 0.0)
    b = U.T @ (Linv @ p)
    # w = L^{-T} U z
    back = Linv.T @ U
    return q, b, back


def _z_of(mu: float, q: np.ndarray, b: np.ndarray) -> np.ndarray:
    return -(1.0 + mu) * b / (1.0 + mu * q)


def _g_of(mu: float, q: np.ndarray, b: np.ndarray) -> float:
    t = (1.0 + mu) / (1.0 + mu * q)
    return float(np.sum(b * b * (q * t * t - 2.0 * t)))


def _onto_constraint(z: np.ndarray, q: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rescale z along its ray so the whitened constraint holds exactly."""
    quad = float(np.sum(q * z * z))
    lin = float(b @ z)
    if quad > 0 and lin != 0:
        alpha = -2.0 * lin / quad
        if alpha > 0:
            return alpha * z
    return z


def _principal_candidates(q, b):
    """KKT point on the interval where P + mu Q is PSD (at most one)."""
    qmax = q[-1]
    if qmax <= 1.0 + 1e-12:
        # objective equals z'(I - D)z on the feasible set, so w = 0 is optimal
        return []
    lo = -1.0 / qmax
    g = lambda mu: _g_of(mu, q, b)
    right = 1.0
    while g(right) >= 0:
        right *= 2.0
        if right > 1e300:
            return []
    span = right - lo
    for k in range(1, 1100):
        mu = lo + span * 2.0**-k
        if mu <= lo or 1.0 + mu * qmax <= 0:
            break
        if g(mu) > 0:
            root = brentq(g, mu, right, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
            return [(root, _z_of(root, q, b))]
        right = mu
    # hard case: the top eigenspace carries (numerically) no linear term
    group = q >= qmax * (1.0 - 1e-9)
    rest = ~group
    z = np.zeros_like(b)
    z[rest] = -(1.0 + lo) * b[rest] / (1.0 + lo * q[rest])
    g_rest = float(np.sum(q[rest] * z[rest] ** 2 + 2 * b[rest] * z[rest]))
    bg = b[group]
    nb = float(np.linalg.norm(bg))
    if nb > 0:
        d = -bg / nb
    else:
        d = np.zeros_like(bg)
        d[0] = 1.0
    beta = float(bg @ d)
    disc = beta * beta - qmax * g_rest
    if disc < 0:
        return []
    r = (-beta + np.sqrt(disc)) / qmax
    z[group] = r * d
    return [(lo, z)]


def _other_candidates(q, b, samples: int = 24):
    """Roots of the secular function on the remaining inter-pole intervals."""
    pos = q[q > 1e-14]
    if pos.size == 0:
        return []
    poles = np.unique(-1.0 / pos)  # ascending
    g = lambda mu: _g_of(mu, q, b)
    out = []
    edges = [-np.inf] + list(poles)
    for a, c in zip(edges[:-1], edges[1:]):
        if np.isinf(a):
            width = max(1.0, abs(c))
            grid = c - width * np.logspace(-12, 8, samples)[::-1]
        else:
            u = np.linspace(0.0, 1.0, samples + 2)[1:-1]
            # cluster samples near both poles
            u = 0.5 - 0.5 * np.cos(np.pi * u)
            grid = a + (c - a) * u
        vals = np.array([g(m) for m in grid])
        for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
            try:
                mu = brentq(g, grid[i], grid[i + 1], xtol=1e-14, maxiter=500)
            except ValueError:
                continue
            out.append((mu, _z_of(mu, q, b)))
    return out


def solve(problem: QcqpProblem, tol: float = DEFAULT_TOL, exhaustive: bool = False) -> QcqpSolution:
    """Global minimiser over the KKT points of the pencil and ``w = 0``.

    ``exhaustive`` additionally scans every inter-pole interval of the
    secular function; the principal interval alone already holds the global
    optimum, so this only serves cross-checking.
    """
    P, Q, p = problem.P, problem.Q, problem.p
    s = p.size
    zero = np.zeros(s)
    if s == 0 or not np.any(p):
        return QcqpSolution(zero, 0.0, 0.0, 1, -1.0)
    q, b, back = _whiten(P, Q, p)
    cands = _principal_candidates(q, b)
    if exhaustive:
        cands = cands + _other_candidates(q, b)
    scale = 1.0 + float(np.linalg.norm(p))
    best = (0.0, 0.0, zero, -1.0)  # objective, norm, w, mu
    for mu, z in cands:
        if not np.all(np.isfinite(z)):
            continue
        z = _onto_constraint(z, q, b)
        w = back @ z
        res = problem.constraint(w)
        if abs(res) > tol * scale:
            # polish in the original coordinates along the ray
            quad, lin = float(w @ Q @ w), float(w @ p)
            if quad > 0 and lin < 0:
                w = (-2.0 * lin / quad) * w
                res = problem.constraint(w)
            if abs(res) > tol * scale:
                continue
        obj = problem.objective(w)
        nrm = float(np.linalg.norm(w))
        if obj < best[0] - 1e-15 * max(1.0, abs(obj)) or (abs(obj - best[0]) <= 1e-15 * max(1.0, abs(obj)) and nrm < best[1]):
            best = (obj, nrm, w, mu)
    obj, _, w, mu = best
    return QcqpSolution(w, obj, problem.constraint(w), len(cands) + 1, mu)
