"""Maximum-likelihood / MAP fitting of patient parameters from adherence logs.

``(lambda_low, lambda_high, b)`` is restricted to a finite grid of tuples.
For a fixed tuple the log-likelihood is concave in ``(c_low, x0)`` (the state
trajectory is affine in both), so each tuple is a small box-constrained
concave problem. The global estimate is the best of those subproblems and
their objective values also give normalised posterior weights.

The solver works on all tuples at once: rows of the work arrays are tuples,
columns are the days on which the patient did not adhere (the adherent days
contribute a linear term that is folded into three per-row coefficients).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .model import Action, PatientParams, state_bound

# states at or below this with a non-adherence observation make the data impossible
ZERO_STATE = 1e-12

ARMIJO_STEP = 1.0
ARMIJO_SHRINK = 0.5
ARMIJO_SLOPE = 1e-4
GRAD_TOL = 1e-8
MAX_ITER = 500
MAX_BACKTRACK = 60
# relative rounding slack on the objective in the sufficient-increase test
F_NOISE = 1e-13

PAPER_LAMBDAS = (0.2, 0.4, 0.6, 0.8, 1.0)
PAPER_BS = (0.6, 0.7, 0.8, 0.9)

Tuple3 = tuple[float, float, float]


class EstimationFailure(RuntimeError):
    """No subproblem has a finite objective."""


class InvalidPoint(ValueError):
    """Gradient requested where the log-likelihood is -inf."""


# --------------------------------------------------------------------------
# data containers


@dataclass(frozen=True)
class ObservationLog:
    actions: tuple[Action, ...]
    decisions: tuple[int, ...]

    def __init__(self, actions: Sequence, decisions: Sequence[int]):
        acts = tuple(Action.parse(a) for a in actions)
        decs = tuple(int(d) for d in decisions)
        if len(acts) != len(decs):
            raise ValueError("actions and decisions differ in length")
        if any(d not in (0, 1) for d in decs):
            raise ValueError("decisions must be 0 or 1")
        object.__setattr__(self, "actions", acts)
        object.__setattr__(self, "decisions", decs)

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_trajectory(cls, traj, n: int | None = None) -> "ObservationLog":
        recs = traj.records if n is None else traj.records[:n]
        return cls([r.action for r in recs], [r.adhered for r in recs])

    def prefix(self, n: int) -> "ObservationLog":
        return ObservationLog(self.actions[:n], self.decisions[:n])

    @classmethod
    def _trusted(cls, actions, decisions) -> "ObservationLog":
        # skips validation; callers guarantee Action members and 0/1 ints
        log = object.__new__(cls)
        object.__setattr__(log, "actions", tuple(actions))
        object.__setattr__(log, "decisions", tuple(decisions))
        return log


@dataclass(frozen=True)
class IndexSets:
    low0: tuple[int, ...]
    low1: tuple[int, ...]
    high0: tuple[int, ...]
    high1: tuple[int, ...]

    def get(self, a: Action, d: int) -> tuple[int, ...]:
        if a is Action.LOW:
            return self.low1 if d else self.low0
        return self.high1 if d else self.high0


def build_index_sets(log: ObservationLog) -> IndexSets:
    buckets: dict[tuple[Action, int], list[int]] = {
        (a, d): [] for a in Action for d in (0, 1)}
    for t, (a, d) in enumerate(zip(log.actions, log.decisions)):
        buckets[(a, d)].append(t)
    return IndexSets(
        low0=tuple(buckets[(Action.LOW, 0)]), low1=tuple(buckets[(Action.LOW, 1)]),
        high0=tuple(buckets[(Action.HIGH, 0)]), high1=tuple(buckets[(Action.HIGH, 1)]),
    )


@dataclass(frozen=True)
class SubproblemGrid:
    lambda_set: tuple[float, ...] = PAPER_LAMBDAS
    b_set: tuple[float, ...] = PAPER_BS
    ordered_only: bool = True

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambda_set)
        bs = tuple(float(v) for v in self.b_set)
        if not lam or not bs:
            raise ValueError("lambda_set and b_set must be non-empty")
        if any(v <= 0 for v in lam):
            raise ValueError("lambda values must be positive")
        if any(not 0 < v < 1 for v in bs):
            raise ValueError("b values must lie in (0, 1)")
        if list(lam) != sorted(set(lam)) or list(bs) != sorted(set(bs)):
            raise ValueError("grid sets must be strictly ascending")
        object.__setattr__(self, "lambda_set", lam)
        object.__setattr__(self, "b_set", bs)

    @property
    def tuples(self) -> list[Tuple3]:
        pairs = [(ll, lh) for ll, lh in itertools.product(self.lambda_set, repeat=2)
                 if ll <= lh or not self.ordered_only]
        return [(ll, lh, b) for (ll, lh), b in itertools.product(pairs, self.b_set)]

    @property
    def M(self) -> int:
        return len(self.tuples)

    def index_of(self, tup: Sequence[float], tol: float = 1e-9) -> int | None:
        for i, cand in enumerate(self.tuples):
            if all(abs(u - v) <= tol for u, v in zip(cand, tup)):
                return i
        return None


@dataclass
class SubproblemSolution:
    tuple: Tuple3
    c_low_hat: float
    x0_hat: float
    psi: float
    induced_states: np.ndarray
    c_high_hat: float = 1.0
    degenerate: bool = False
    iterations: int = 0
    certificate_spread: float | None = None

    @property
    def x_bar(self) -> float:
        return state_bound(b=self.tuple[2])

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.psi)


@dataclass(frozen=True)
class ParamEstimate:
    c_low: float
    lambda_low: float
    lambda_high: float
    b: float
    x0: float
    psi: float
    index: int
    c_high: float = 1.0

    @property
    def tuple(self) -> Tuple3:
        return (self.lambda_low, self.lambda_high, self.b)

    def to_params(self, gamma_low: float, gamma_high: float, alpha: float) -> PatientParams:
        x_bar = state_bound(b=self.b)
        return PatientParams(
            c_low=min(max(self.c_low, 0.0), 1.0), lambda_low=self.lambda_low,
            lambda_high=self.lambda_high, b=self.b, x0=min(max(self.x0, 0.0), x_bar),
            gamma_low=gamma_low, gamma_high=gamma_high, alpha=alpha)


@dataclass
class PosteriorWeights:
    weights: np.ndarray
    tuples: list[Tuple3] = field(default_factory=list)

    def __getitem__(self, i):
        return self.weights[i]

    def __len__(self) -> int:
        return len(self.weights)


# --------------------------------------------------------------------------
# priors


class LogPrior:
    """Log-density over ``(c_low, x0)`` given a tuple, up to a constant.

    Must be concave in ``(c_low, x0)`` and finite on the feasible box.
    Subclasses may override ``gradient``/``hessian``; the defaults use
    central differences on ``__call__``.
    """

    fd_step = 1e-5

    def __call__(self, c_low: float, c_high: float, x0: float, tup: Tuple3) -> float:
        raise NotImplementedError

    @property
    def is_flat(self) -> bool:
        return False

    def values(self, c, x0, tuples) -> np.ndarray:
        return np.array([self(ci, 1.0, xi, t) for ci, xi, t in zip(c, x0, tuples)])

    def gradient(self, c, x0, tuples) -> np.ndarray:
        h = self.fd_step
        out = np.empty((len(c), 2))
        for k, (ci, xi, t) in enumerate(zip(c, x0, tuples)):
            out[k, 0] = (self(ci + h, 1.0, xi, t) - self(ci - h, 1.0, xi, t)) / (2 * h)
            out[k, 1] = (self(ci, 1.0, xi + h, t) - self(ci, 1.0, xi - h, t)) / (2 * h)
        return out

    def hessian(self, c, x0, tuples) -> np.ndarray:
        h = self.fd_step * 10
        out = np.empty((len(c), 3))  # (cc, cx, xx)
        for k, (ci, xi, t) in enumerate(zip(c, x0, tuples)):
            f = lambda u, v: self(u, 1.0, v, t)  # noqa: E731
            f0 = f(ci, xi)
            out[k, 0] = (f(ci + h, xi) - 2 * f0 + f(ci - h, xi)) / h**2
            out[k, 2] = (f(ci, xi + h) - 2 * f0 + f(ci, xi - h)) / h**2
            out[k, 1] = (f(ci + h, xi + h) - f(ci + h, xi - h)
                         - f(ci - h, xi + h) + f(ci - h, xi - h)) / (4 * h**2)
        return out


class UniformPrior(LogPrior):
    def __call__(self, c_low, c_high, x0, tup):
        return 0.0

    @property
    def is_flat(self) -> bool:
        return True

    def values(self, c, x0, tuples):
        return np.zeros(len(c))

    def gradient(self, c, x0, tuples):
        return np.zeros((len(c), 2))

    def hessian(self, c, x0, tuples):
        return np.zeros((len(c), 3))


@dataclass
class GaussianPrior(LogPrior):
    """Independent normal log-densities on ``c_low`` and ``x0`` (unnormalised)."""

    c_mean: float = 0.5
    c_sd: float = 1.0
    x0_mean: float = 0.0
    x0_sd: float = 10.0

    def __call__(self, c_low, c_high, x0, tup):
        return (-0.5 * ((c_low - self.c_mean) / self.c_sd) ** 2
                - 0.5 * ((x0 - self.x0_mean) / self.x0_sd) ** 2)

    def values(self, c, x0, tuples):
        c, x0 = np.asarray(c), np.asarray(x0)
        return (-0.5 * ((c - self.c_mean) / self.c_sd) ** 2
                - 0.5 * ((x0 - self.x0_mean) / self.x0_sd) ** 2)

    def gradient(self, c, x0, tuples):
        c, x0 = np.asarray(c), np.asarray(x0)
        return np.column_stack([-(c - self.c_mean) / self.c_sd**2,
                                -(x0 - self.x0_mean) / self.x0_sd**2])

    def hessian(self, c, x0, tuples):
        n = len(c)
        return np.column_stack([np.full(n, -1 / self.c_sd**2), np.zeros(n),
                                np.full(n, -1 / self.x0_sd**2)])


class CallablePrior(LogPrior):
    def __init__(self, fn: Callable[[float, float, float, Tuple3], float]):
        self.fn = fn

    def __call__(self, c_low, c_high, x0, tup):
        return float(self.fn(c_low, c_high, x0, tup))


def as_prior(prior) -> LogPrior:
    if prior is None:
        return UniformPrior()
    if isinstance(prior, LogPrior):
        return prior
    if callable(prior):
        return CallablePrior(prior)
    raise TypeError(f"cannot use {prior!r} as a log-prior")


# --------------------------------------------------------------------------
# single-tuple reference functions


def _log1mexp(z):
    """log(1 - exp(-z)) for z > 0, accurate at both ends."""
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(z < math.log(2.0),
                       np.log(-np.expm1(-np.minimum(z, math.log(2.0)))),
                       np.log1p(-np.exp(-np.maximum(z, math.log(2.0)))))
    return np.where(z > 0, out, -np.inf)


def _lam_per_step(tup: Tuple3, log: ObservationLog) -> np.ndarray:
    return np.array([tup[0] if a is Action.LOW else tup[1] for a in log.actions])


def induced_trajectory(x0: float, c_low: float, tup: Tuple3, log: ObservationLog) -> np.ndarray:
    """States x_0..x_n implied by ``(x0, c_low)`` under the tuple's recovery rate.

    Uses the closed form ``b**t x0 + sum_k b**(t-1-k) c_{a_k} d_k``.
    """
    b = tup[2]
    n = len(log)
    idx = build_index_sets(log)
    x = np.empty(n)
    for t in range(n):
        acc = b**t * x0
        acc += sum(b ** (t - 1 - k) * c_low for k in idx.low1 if k < t)
        acc += sum(b ** (t - 1 - k) for k in idx.high1 if k < t)
        x[t] = acc
    return x


def _cost_sensitivity(tup: Tuple3, log: ObservationLog) -> np.ndarray:
    """d x_t / d c_low: discounted count of earlier low-burden adherences."""
    b = tup[2]
    out = np.zeros(len(log))
    acc = 0.0
    for t in range(len(log)):
        out[t] = acc
        acc = b * acc + (1.0 if log.actions[t] is Action.LOW and log.decisions[t] else 0.0)
    return out


def log_likelihood(x0: float, c_low: float, tup: Tuple3, log: ObservationLog) -> float:
    x = induced_trajectory(x0, c_low, tup, log)
    lam = _lam_per_step(tup, log)
    d = np.array(log.decisions, dtype=bool)
    if np.any(~d & (x <= ZERO_STATE)):
        return -math.inf
    return float(np.sum(-lam[d] * x[d]) + np.sum(_log1mexp(lam[~d] * x[~d])))


def log_likelihood_gradient(x0: float, c_low: float, tup: Tuple3,
                            log: ObservationLog) -> tuple[float, float]:
    """Exact ``(d/dx0, d/dc_low)`` of :func:`log_likelihood`."""
    x = induced_trajectory(x0, c_low, tup, log)
    lam = _lam_per_step(tup, log)
    d = np.array(log.decisions, dtype=bool)
    if np.any(~d & (x <= ZERO_STATE)):
        raise InvalidPoint("log-likelihood is -inf at this point")
    dldx = np.where(d, -lam, lam / np.expm1(lam * np.where(d, 1.0, x)))
    b = tup[2]
    dx_dx0 = b ** np.arange(len(log), dtype=float)
    dx_dc = _cost_sensitivity(tup, log)
    return float(np.dot(dldx, dx_dx0)), float(np.dot(dldx, dx_dc))


# --------------------------------------------------------------------------
# batched solver


class _Rows:
    """Work arrays for a set of tuples sharing one observation log."""

    def __init__(self, x_hi, lin_x, lin_c, lin_0, P, L, H, lam0, tuples, prior):
        self.x_hi = x_hi
        self.lin_x, self.lin_c, self.lin_0 = lin_x, lin_c, lin_0
        self.P, self.L, self.H, self.lam0 = P, L, H, lam0
        self.lam_sq = lam0 * lam0
        # fixed products for the Hessian contractions
        self.LL, self.LP, self.PP = L * L, L * P, P * P
        self.tuples = tuples
        self.prior = prior

    @classmethod
    def build(cls, tuples: Sequence[Tuple3], b_values: np.ndarray, b_index: np.ndarray,
              pw: np.ndarray, Lb: np.ndarray, Hb: np.ndarray,
              is_low: np.ndarray, adhered: np.ndarray, prior: LogPrior) -> "_Rows":
        """``pw``, ``Lb``, ``Hb`` are per-b arrays of shape (n_b, n)."""
        lam_low = np.array([t[0] for t in tuples])
        lam_high = np.array([t[1] for t in tuples])
        x_hi = 1.0 / (1.0 - b_values[b_index])
        a_low, a_high = adhered & is_low, adhered & ~is_low
        # linear part from adherent days, per b then per row
        sums = {}
        for name, arr in (("x", pw), ("c", Lb), ("0", Hb)):
            s_low = arr[:, a_low].sum(axis=1)
            s_high = arr[:, a_high].sum(axis=1)
            sums[name] = lam_low * s_low[b_index] + lam_high * s_high[b_index]
        miss = ~adhered
        P = pw[:, miss][b_index]
        L = Lb[:, miss][b_index]
        H = Hb[:, miss][b_index]
        lam0 = np.where(is_low[miss][None, :], lam_low[:, None], lam_high[:, None])
        return cls(x_hi, sums["x"], sums["c"], sums["0"], P, L, H, lam0, list(tuples), prior)

    def __len__(self) -> int:
        return len(self.x_hi)

    def evaluate(self, rows: np.ndarray, c: np.ndarray, x0: np.ndarray, order: int = 0):
        """Objective, plus gradient ``(d/dc, d/dx0)`` and packed Hessian
        ``(cc, cx, xx)`` when ``order`` is 2, for the selected rows."""
        P, L = self.P[rows], self.L[rows]
        X = P * x0[:, None]
        X += L * c[:, None]
        X += self.H[rows]
        lam = self.lam0[rows]
        bad = np.any(X <= ZERO_STATE, axis=1)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            em1 = np.expm1(lam * X)
            # 1 - exp(-z) without cancellation for small z
            q = em1 / (1.0 + em1)
            f = (np.log(q).sum(axis=1)
                 - (self.lin_x[rows] * x0 + self.lin_c[rows] * c + self.lin_0[rows]))
        f[bad] = -np.inf
        flat = self.prior.is_flat
        if not flat:
            tups = [self.tuples[i] for i in rows]
            f = f + self.prior.values(c, x0, tups)
        if order == 0:
            return f
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            gz = lam / em1
            hz = -self.lam_sq[rows] / (em1 * q)
        gz[bad] = 0.0
        hz[~np.isfinite(hz)] = 0.0
        g = np.empty((len(rows), 2))
        g[:, 0] = np.einsum("ij,ij->i", gz, L) - self.lin_c[rows]
        g[:, 1] = np.einsum("ij,ij->i", gz, P) - self.lin_x[rows]
        Hm = np.empty((len(rows), 3))
        Hm[:, 0] = np.einsum("ij,ij->i", hz, self.LL[rows])
        Hm[:, 1] = np.einsum("ij,ij->i", hz, self.LP[rows])
        Hm[:, 2] = np.einsum("ij,ij->i", hz, self.PP[rows])
        if not flat:
            g += self.prior.gradient(c, x0, tups)
            Hm += self.prior.hessian(c, x0, tups)
        g[bad] = np.nan
        return f, g, Hm


def _project(c, x0, x_hi):
    return np.clip(c, 0.0, 1.0), np.clip(x0, 0.0, x_hi)


def _feasible_start(rows: _Rows, c, x0):
    """Pull starting points toward the box centre until the objective is finite.

    The centre is always feasible: there every state is at least b**t * x_bar/2 > 0.
    """
    c, x0 = _project(np.asarray(c, float).copy(), np.asarray(x0, float).copy(), rows.x_hi)
    idx = np.arange(len(rows))
    f = rows.evaluate(idx, c, x0)
    cc, xc = 0.5, 0.5 * rows.x_hi
    for _ in range(60):
        bad = ~np.isfinite(f)
        if not bad.any():
            break
        c[bad] = cc + 0.5 * (c[bad] - cc)
        x0[bad] = xc[bad] + 0.5 * (x0[bad] - xc[bad])
        f[bad] = rows.evaluate(idx[bad], c[bad], x0[bad])
    return c, x0


@dataclass
class _Solved:
    c: np.ndarray
    x0: np.ndarray
    psi: np.ndarray
    iterations: np.ndarray
    degenerate: np.ndarray


def _coordinate_step(g, h, free, width):
    """Diagonal Newton step; where the curvature vanishes, aim at the far bound."""
    curved = free & (h < 0)
    flat = free & ~curved & (g != 0)
    step = np.where(curved, -g / np.where(curved, h, 1.0), 0.0)
    return np.where(flat, np.sign(g) * width, step)


def _degenerate(c, x0, f, g, x_hi) -> np.ndarray:
    """Maximiser on a bound with the gradient still pushing outward."""
    with np.errstate(invalid="ignore"):
        out_c = ((c <= 0) & (g[:, 0] < -GRAD_TOL)) | ((c >= 1) & (g[:, 0] > GRAD_TOL))
        out_x = ((x0 <= 0) & (g[:, 1] < -GRAD_TOL)) | ((x0 >= x_hi) & (g[:, 1] > GRAD_TOL))
    return np.isfinite(f) & (out_c | out_x)


def _maximize(rows: _Rows, c0, x00) -> _Solved:
    """Projected Newton ascent with Armijo backtracking along the projection arc.

    Variables sitting on a bound with the gradient pointing out of the box are
    frozen for the Newton step; the rest take a joint (or, when the joint
    block is singular, per-coordinate) Newton step.
    """
    m = len(rows)
    c, x0 = _feasible_start(rows, c0, x00)
    all_idx = np.arange(m)
    f, g, Hm = rows.evaluate(all_idx, c, x0, order=2)
    iters = np.zeros(m, dtype=int)
    active = np.isfinite(f)
    eps = 1e-10
    for _ in range(MAX_ITER):
        idx = all_idx[active]
        if idx.size == 0:
            break
        ci, xi, hi = c[idx], x0[idx], rows.x_hi[idx]
        gi, Hi = g[idx], Hm[idx]
        gc, gx = gi[:, 0], gi[:, 1]
        # projected gradient as the stationarity measure
        pc, px = _project(ci + gc, xi + gx, hi)
        done = np.hypot(pc - ci, px - xi) < GRAD_TOL

        free_c = ~(((ci <= eps) & (gc < 0)) | ((ci >= 1 - eps) & (gc > 0)))
        free_x = ~(((xi <= eps * hi) & (gx < 0)) | ((xi >= hi * (1 - eps)) & (gx > 0)))
        hcc, hcx, hxx = Hi[:, 0], Hi[:, 1], Hi[:, 2]
        det = hcc * hxx - hcx * hcx
        joint = free_c & free_x & (hcc < 0) & (det > 1e-14 * (hcc * hcc + hxx * hxx))
        safe_det = np.where(joint, det, 1.0)
        dc = _coordinate_step(gc, hcc, free_c, 1.0)
        dx = _coordinate_step(gx, hxx, free_x, hi)
        dc = np.where(joint, -(hxx * gc - hcx * gx) / safe_det, dc)
        dx = np.where(joint, -(-hcx * gc + hcc * gx) / safe_det, dx)

        step = np.full(idx.size, ARMIJO_STEP)
        searching = ~done
        accepted = np.zeros(idx.size, dtype=bool)
        fi = f[idx]
        for _ in range(MAX_BACKTRACK):
            s = np.flatnonzero(searching)
            if s.size == 0:
                break
            tc, tx = _project(ci[s] + step[s] * dc[s], xi[s] + step[s] * dx[s], hi[s])
            tf, tg, tH = rows.evaluate(idx[s], tc, tx, order=2)
            gain = gc[s] * (tc - ci[s]) + gx[s] * (tx - xi[s])
            moved = (tc != ci[s]) | (tx != xi[s])
            slack = F_NOISE * (1.0 + np.abs(fi[s]))
            ok = np.isfinite(tf) & (tf >= fi[s] + ARMIJO_SLOPE * gain - slack) & moved
            rows_ok = idx[s[ok]]
            c[rows_ok], x0[rows_ok], f[rows_ok] = tc[ok], tx[ok], tf[ok]
            g[rows_ok], Hm[rows_ok] = tg[ok], tH[ok]
            accepted[s[ok]] = True
            searching[s[ok]] = False
            # projection pinned the trial point: nothing left to gain
            searching[s[~ok & ~moved]] = False
            step[s[~ok]] *= ARMIJO_SHRINK
        iters[idx[~done]] += 1
        active[idx[done | ~accepted]] = False
    return _Solved(c, x0, f, iters, _degenerate(c, x0, f, g, rows.x_hi))


def _per_b_arrays(b_values: np.ndarray, is_low: np.ndarray, adhered: np.ndarray):
    n = len(is_low)
    nb = len(b_values)
    pw = np.empty((nb, n))
    Lb = np.zeros((nb, n))
    Hb = np.zeros((nb, n))
    pw[:, 0] = 1.0
    jump_low = (adhered & is_low).astype(float)
    jump_high = (adhered & ~is_low).astype(float)
    for t in range(1, n):
        pw[:, t] = pw[:, t - 1] * b_values
        Lb[:, t] = b_values * Lb[:, t - 1] + jump_low[t - 1]
        Hb[:, t] = b_values * Hb[:, t - 1] + jump_high[t - 1]
    return pw, Lb, Hb


def _solve_rows(tuples: Sequence[Tuple3], log: ObservationLog, prior: LogPrior,
                starts: np.ndarray | None = None):
    if len(log) == 0:
        raise ValueError("cannot fit an empty log")
    b_values = np.array(sorted({t[2] for t in tuples}))
    b_index = np.searchsorted(b_values, [t[2] for t in tuples])
    is_low = np.array([a is Action.LOW for a in log.actions])
    adhered = np.array(log.decisions, dtype=bool)
    pw, Lb, Hb = _per_b_arrays(b_values, is_low, adhered)
    rows = _Rows.build(tuples, b_values, b_index, pw, Lb, Hb, is_low, adhered, prior)
    if starts is None:
        starts = np.column_stack([np.full(len(rows), 0.5), 0.5 * rows.x_hi])
    return rows, _maximize(rows, starts[:, 0], starts[:, 1])


def _corner_starts(x_hi: np.ndarray) -> list[np.ndarray]:
    m = len(x_hi)
    pts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.5)]
    return [np.column_stack([np.full(m, pc), px * x_hi]) for pc, px in pts]


def _assemble(tuples, log, solved: _Solved, spreads=None) -> list[SubproblemSolution]:
    out = []
    for k, tup in enumerate(tuples):
        out.append(SubproblemSolution(
            tuple=tuple(tup), c_low_hat=float(solved.c[k]), x0_hat=float(solved.x0[k]),
            psi=float(solved.psi[k]),
            induced_states=induced_states_fast(solved.x0[k], solved.c[k], tup, log),
            degenerate=bool(solved.degenerate[k]), iterations=int(solved.iterations[k]),
            certificate_spread=None if spreads is None else float(spreads[k])))
    return out


def induced_states_fast(x0: float, c_low: float, tup: Tuple3, log: ObservationLog) -> np.ndarray:
    """Same states as :func:`induced_trajectory`, by forward recursion."""
    b = tup[2]
    x = np.empty(len(log))
    cur = x0
    for t, (a, d) in enumerate(zip(log.actions, log.decisions)):
        x[t] = cur
        cur = b * cur + (c_low if a is Action.LOW else 1.0) * d
    return x


def _multi_start(tuples, log, prior):
    runs = []
    rows = None
    for starts in _corner_starts(np.array([1.0 / (1.0 - t[2]) for t in tuples])):
        rows, solved = _solve_rows(tuples, log, prior, starts)
        runs.append(solved)
    psis = np.array([r.psi for r in runs])
    with np.errstate(invalid="ignore"):
        spread = np.where(np.all(np.isfinite(psis), axis=0),
                          psis.max(axis=0) - psis.min(axis=0), np.where(
                              np.all(~np.isfinite(psis), axis=0), 0.0, np.inf))
    best = np.argmax(np.where(np.isfinite(psis), psis, -np.inf), axis=0)
    pick = lambda attr: np.array([getattr(runs[best[k]], attr)[k]  # noqa: E731
                                  for k in range(len(tuples))])
    merged = _Solved(pick("c"), pick("x0"), pick("psi"),
                     sum(r.iterations for r in runs), pick("degenerate"))
    return merged, spread


def solve_subproblem(tup: Tuple3, log: ObservationLog, prior=None, *,
                     start: tuple[float, float] | None = None,
                     certify: bool = True) -> SubproblemSolution:
    """Maximise log-likelihood + log-prior over ``(c_low, x0)`` for one tuple.

    With ``certify`` the problem is solved from the four box corners and the
    centre; ``certificate_spread`` records the largest objective disagreement.
    """
    prior = as_prior(prior)
    tuples = [tuple(float(v) for v in tup)]
    if certify and start is None:
        solved, spread = _multi_start(tuples, log, prior)
        sol = _assemble(tuples, log, solved, spread)[0]
    else:
        starts = None if start is None else np.array([[start[0], start[1]]])
        _, solved = _solve_rows(tuples, log, prior, starts)
        sol = _assemble(tuples, log, solved)[0]
    if not sol.feasible:
        raise EstimationFailure(f"objective is -inf on the whole box for tuple {tup}")
    return sol


def fit_all(grid: SubproblemGrid, log: ObservationLog, prior=None, *,
            certify: bool = False) -> list[SubproblemSolution]:
    prior = as_prior(prior)
    tuples = grid.tuples
    if certify:
        solved, spread = _multi_start(tuples, log, prior)
        return _assemble(tuples, log, solved, spread)
    _, solved = _solve_rows(tuples, log, prior)
    return _assemble(tuples, log, solved)


def _best_index(psis: Sequence[float]) -> int:
    psis = np.asarray(psis, dtype=float)
    if not np.any(np.isfinite(psis)):
        raise EstimationFailure("every subproblem is infeasible")
    # argmax returns the first maximum, i.e. the smallest tuple index on ties
    return int(np.argmax(np.where(np.isfinite(psis), psis, -np.inf)))


def mle_estimate(solutions: Sequence[SubproblemSolution]) -> ParamEstimate:
    k = _best_index([s.psi for s in solutions])
    s = solutions[k]
    return ParamEstimate(c_low=s.c_low_hat, lambda_low=s.tuple[0], lambda_high=s.tuple[1],
                         b=s.tuple[2], x0=s.x0_hat, psi=s.psi, index=k, c_high=s.c_high_hat)


def weights_from_psi(psis: Sequence[float]) -> np.ndarray:
    psis = np.asarray(psis, dtype=float)
    finite = np.isfinite(psis)
    if not finite.any():
        raise EstimationFailure("every subproblem is infeasible")
    top = psis[finite].max()
    w = np.where(finite, np.exp(np.where(finite, psis - top, 0.0)), 0.0)
    return w / w.sum()


def posterior_weights(solutions: Sequence[SubproblemSolution]) -> PosteriorWeights:
    return PosteriorWeights(weights_from_psi([s.psi for s in solutions]),
                            [s.tuple for s in solutions])


# --------------------------------------------------------------------------
# incremental fitting for controllers


@dataclass
class FitResult:
    tuples: list[Tuple3]
    c_low: np.ndarray
    x0: np.ndarray
    psi: np.ndarray
    degenerate: np.ndarray
    iterations: np.ndarray
    log: ObservationLog

    @property
    def best_index(self) -> int:
        return _best_index(self.psi)

    @property
    def weights(self) -> np.ndarray:
        return weights_from_psi(self.psi)

    def estimate(self, i: int | None = None) -> ParamEstimate:
        i = self.best_index if i is None else i
        ll, lh, b = self.tuples[i]
        return ParamEstimate(c_low=float(self.c_low[i]), lambda_low=ll, lambda_high=lh, b=b,
                             x0=float(self.x0[i]), psi=float(self.psi[i]), index=i)

    def induced_states(self, i: int) -> np.ndarray:
        return induced_states_fast(self.x0[i], self.c_low[i], self.tuples[i], self.log)

    def next_state(self, i: int) -> float:
        """State one day past the end of the log under subproblem ``i``'s fit."""
        tup = self.tuples[i]
        b = tup[2]
        cur = float(self.x0[i])
        for a, d in zip(self.log.actions, self.log.decisions):
            cur = b * cur + (float(self.c_low[i]) if a is Action.LOW else 1.0) * d
        return min(cur, 1.0 / (1.0 - b))

    def solutions(self) -> list[SubproblemSolution]:
        solved = _Solved(self.c_low, self.x0, self.psi, self.iterations, self.degenerate)
        return _assemble(self.tuples, self.log, solved)


class SubproblemFitter:
    """Refits every subproblem as observations arrive, warm-starting each day."""

    def __init__(self, grid: SubproblemGrid, prior=None):
        self.grid = grid
        self.tuples = grid.tuples
        self.prior = as_prior(prior)
        self.b_values = np.array(sorted({t[2] for t in self.tuples}))
        self.b_index = np.searchsorted(self.b_values, [t[2] for t in self.tuples])
        self.actions: list[Action] = []
        self.decisions: list[int] = []
        self._cap = 0
        self._pw = self._L = self._H = None
        self._jl = self._jh = None
        self._warm: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.actions)

    def _grow(self):
        cap = max(64, 2 * self._cap)
        nb = len(self.b_values)
        new = [np.zeros((nb, cap)) for _ in range(3)]
        if self._cap:
            for arr, old in zip(new, (self._pw, self._L, self._H)):
                arr[:, : self._cap] = old
        self._pw, self._L, self._H = new
        self._cap = cap

    def append(self, a: Action, d: int) -> None:
        t = len(self.actions)
        if t >= self._cap:
            self._grow()
        b = self.b_values
        if t == 0:
            self._pw[:, 0] = 1.0
        else:
            pa, pd = self.actions[-1], self.decisions[-1]
            self._pw[:, t] = self._pw[:, t - 1] * b
            self._L[:, t] = b * self._L[:, t - 1] + float(pa is Action.LOW and pd)
            self._H[:, t] = b * self._H[:, t - 1] + float(pa is Action.HIGH and pd)
        self.actions.append(Action.parse(a))
        self.decisions.append(int(d))

    def fit(self) -> FitResult:
        n = len(self.actions)
        if n == 0:
            raise ValueError("no observations yet")
        is_low = np.array([a is Action.LOW for a in self.actions])
        adhered = np.array(self.decisions, dtype=bool)
        rows = _Rows.build(self.tuples, self.b_values, self.b_index,
                           self._pw[:, :n], self._L[:, :n], self._H[:, :n],
                           is_low, adhered, self.prior)
        if self._warm is None:
            starts = np.column_stack([np.full(len(rows), 0.5), 0.5 * rows.x_hi])
        else:
            starts = self._warm
        solved = _maximize(rows, starts[:, 0], starts[:, 1])
        self._warm = np.column_stack([solved.c, solved.x0])
        return FitResult(self.tuples, solved.c, solved.x0, solved.psi, solved.degenerate,
                         solved.iterations, ObservationLog._trusted(self.actions, self.decisions))
