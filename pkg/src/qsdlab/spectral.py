"""Exact numerics for the population-size chain on {1, ..., N}.

The projected branching process is truncated at ``N``: jumps above ``N`` and
jumps to 0 are both treated as killing, so the generator restricted to
{1..N} is sub-Markovian and its dominant eigenvalue ``-alpha`` slightly
over-estimates the true decay rate (by an amount invisible at N ~ 200).
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy import linalg
from scipy.sparse import csgraph
from scipy.stats import poisson

from .offspring import OffspringDistribution


class SpectralError(RuntimeError):
    pass


class NoConvergence(SpectralError):
    pass


class Reducible(SpectralError):
    pass


class TotalMassZero(SpectralError):
    pass


class NotBirthDeath(ValueError):
    pass


@dataclass
class TruncatedKernel:
    """Generator ``Q`` on states 1..N (index ``i - 1``) plus per-row leaks."""

    N: int
    Q: np.ndarray
    to_empty: np.ndarray
    overflow: np.ndarray
    offspring: OffspringDistribution | None = None

    @property
    def states(self) -> np.ndarray:
        return np.arange(1, self.N + 1)

    @property
    def killing(self) -> np.ndarray:
        return self.to_empty + self.overflow

    def is_birth_death(self) -> bool:
        off = self.Q - np.diag(np.diag(self.Q))
        i, j = np.nonzero(off)
        return bool(np.all(np.abs(i - j) == 1)) and not np.any(self.overflow[:-1] > 0)


def build_kernel(offspring: OffspringDistribution, N: int) -> TruncatedKernel:
    """Rates ``i * rate * p_k`` for the move ``i -> i - 1 + k``."""
    if N < 1:
        raise ValueError("truncation level must be >= 1")
    rate = offspring.event_rate
    kmax = N + 1
    p = offspring.pmf_array(kmax)
    Q = np.zeros((N, N))
    to_empty = np.zeros(N)
    overflow = np.zeros(N)
    for i in range(1, N + 1):
        r = i * rate
        Q[i - 1, i - 1] -= r
        if i == 1:
            to_empty[0] = r * p[0]
        for k in range(0 if i > 1 else 1, N - i + 2):
            if p[k] > 0:
                Q[i - 1, i - 2 + k] += r * p[k]
        overflow[i - 1] = r * offspring.tail_beyond(N - i + 1)
    return TruncatedKernel(N, Q, to_empty, overflow, offspring)


def kernel_from_generator(Q: np.ndarray) -> TruncatedKernel:
    """Wrap an arbitrary sub-Markovian generator; the row deficit becomes killing."""
    Q = np.asarray(Q, dtype=float)
    deficit = -Q.sum(axis=1)
    return TruncatedKernel(Q.shape[0], Q, np.clip(deficit, 0, None), np.zeros(Q.shape[0]))


@dataclass
class SpectralData:
    alpha: float
    nu: np.ndarray
    h: np.ndarray
    residuals: dict = field(default_factory=dict)
    iterations: int = 0

    @property
    def N(self) -> int:
        return len(self.nu)

    @property
    def nu_h(self) -> float:
        return float(self.nu @ self.h)

    def survival_limit(self) -> np.ndarray:
        """``lim e^{alpha t} P^i(survive)``, i.e. ``h`` rescaled to ``nu h = 1``."""
        return self.h / self.nu_h

    def to_json(self) -> str:
        return json.dumps({
            "alpha": self.alpha,
            "nu": self.nu.tolist(),
            "h": self.h.tolist(),
            "residuals": self.residuals,
            "N": self.N,
        }, sort_keys=True)


def _reaches_state_one(Q: np.ndarray) -> bool:
    adj = (Q - np.diag(np.diag(Q))) > 0
    # reverse graph: which states can reach state 1
    order = csgraph.breadth_first_order(adj.T.astype(float), 0, directed=True,
                                        return_predecessors=False)
    return len(order) == Q.shape[0]


def compute_spectral(kernel: TruncatedKernel, tol: float = 1e-13, max_iter: int = 200) -> SpectralData:
    """Decay rate and both Perron eigenvectors by shifted inverse iteration.

    For ``s > -alpha`` the resolvent ``(sI - Q)^{-1}`` is entrywise
    non-negative, so iterating it keeps vectors positive and the
    Collatz-Wielandt ratios ``(Qv)_i / v_i`` bracket ``-alpha``. The shift is
    moved to the upper bracket after every solve, which makes the convergence
    superlinear.
    """
    Q = kernel.Q
    N = kernel.N
    n_comp, _ = csgraph.connected_components((Q - np.diag(np.diag(Q))) > 0,
                                             directed=True, connection="strong")
    if n_comp > 1 and not _reaches_state_one(Q):
        raise Reducible("some states never reach state 1; no single decay rate")
    scale = max(float(np.max(np.abs(np.diag(Q)))), 1.0)
    eye = np.eye(N)

    h = np.ones(N)
    hi = float(np.max(Q @ h / h))
    lo = float(np.min(Q @ h / h))
    it = 0
    while True:
        it += 1
        if it > max_iter:
            raise NoConvergence(f"bracket still {hi - lo:.3e} after {max_iter} solves")
        shift = hi + max(hi - lo, 1e-10 * scale) * 0.5
        h = linalg.solve(shift * eye - Q, h)
        if not np.all(h > 0):
            raise NoConvergence("iterate lost positivity")
        h /= h.max()
        ratio = (Q @ h) / h
        hi, lo = float(ratio.max()), float(ratio.min())
        if hi - lo <= tol * scale:
            break
    eig = 0.5 * (hi + lo)

    shift = eig + 1e-9 * scale
    lu = linalg.lu_factor(shift * eye - Q)
    nu = np.full(N, 1.0 / N)
    for _ in range(4):
        h = linalg.lu_solve(lu, h)
        h /= h.max()
        nu = linalg.lu_solve(lu, nu, trans=1)
        nu = np.clip(nu, 0.0, None)
        nu /= nu.sum()
    if h[0] <= 0:
        raise NoConvergence("right eigenvector vanishes at state 1")
    h = h / h[0]
    alpha = -float(nu @ Q @ h) / float(nu @ h)
    res_nu = float(np.abs(nu @ Q + alpha * nu).sum())
    res_h = float(np.abs(Q @ h + alpha * h).max() / np.abs(h).max())
    return SpectralData(alpha, nu, h, {"left_l1": res_nu, "right_sup_rel": res_h}, it)


def _poisson_weights(lam_t: float, eps: float = 1e-15) -> np.ndarray:
    if lam_t == 0:
        return np.array([1.0])
    n_max = int(poisson.isf(eps, lam_t)) + 2
    return poisson.pmf(np.arange(n_max + 1), lam_t)


def propagate(Q: np.ndarray, initial: np.ndarray, t: float) -> np.ndarray:
    """Row vector ``initial @ expm(t Q)`` by uniformization.

    With ``c >= max |q_ii|`` the matrix ``I + Q/c`` is sub-stochastic, and the
    dropped Poisson tail bounds the absolute error (1e-15 per unit of mass).
    """
    v = np.atleast_2d(np.asarray(initial, dtype=float))
    if t == 0:
        return v[0].copy() if np.ndim(initial) == 1 else v.copy()
    c = float(np.max(-np.diag(Q)))
    if c <= 0:
        out = v
    else:
        P = np.eye(Q.shape[0]) + Q / c
        weights = _poisson_weights(c * t)
        out = weights[0] * v
        term = v
        for w in weights[1:]:
            term = term @ P
            out = out + w * term
    return out[0] if np.ndim(initial) == 1 else out


def matrix_exp_row(kernel: TruncatedKernel, state: int, t: float) -> np.ndarray:
    """Row ``P_t(state, .)`` of the sub-Markovian semigroup."""
    if not 1 <= state <= kernel.N:
        raise ValueError(f"state {state} outside 1..{kernel.N}")
    e = np.zeros(kernel.N)
    e[state - 1] = 1.0
    return propagate(kernel.Q, e, t)


def transition_rows(kernel: TruncatedKernel, states, t: float) -> np.ndarray:
    states = list(states)
    E = np.zeros((len(states), kernel.N))
    for r, s in enumerate(states):
        E[r, s - 1] = 1.0
    return propagate(kernel.Q, E, t)


def conditioned_law(kernel: TruncatedKernel, initial, t: float) -> np.ndarray:
    """Law at ``t`` conditioned on not being killed."""
    init = np.asarray(initial, dtype=float)
    row = propagate(kernel.Q, init, t)
    mass = row.sum()
    if not mass > 1e-300:
        raise TotalMassZero(f"surviving mass {mass} at t={t}")
    return row / mass


def survival_probability(kernel: TruncatedKernel, state: int, t: float) -> float:
    return float(matrix_exp_row(kernel, state, t).sum())


@dataclass
class QsdVector:
    theta: float
    weights: np.ndarray
    valid: bool
    tail_mass: float
    first_negative: int | None = None


def qsd_family(kernel: TruncatedKernel, theta: float) -> QsdVector:
    """QSD with absorption rate ``theta`` of a birth-death chain.

    Forward recursion from the flux condition ``nu_1 = theta / d_1``; done in
    exact rational arithmetic because the minimal member is the decaying
    solution of the recursion and would be swamped by rounding in floats.
    """
    if not kernel.is_birth_death():
        raise NotBirthDeath("qsd_family needs nearest-neighbour jumps only")
    if not theta > 0:
        raise ValueError("theta must be positive")
    N = kernel.N
    Q = kernel.Q
    b = [Fraction(float(Q[j, j + 1])) if j + 1 < N else Fraction(0) for j in range(N)]
    # total exit rate, including the overflow leak at the top row
    out = [Fraction(float(-Q[j, j])) for j in range(N)]
    d = [Fraction(float(kernel.to_empty[0]))] + [Fraction(float(Q[j, j - 1])) for j in range(1, N)]
    th = Fraction(float(theta))
    nu = [th / d[0]]
    first_negative = None
    for j in range(N - 1):
        prev = b[j - 1] * nu[j - 1] if j > 0 else Fraction(0)
        nxt = ((out[j] - th) * nu[j] - prev) / d[j + 1]
        nu.append(nxt)
        if nxt <= 0 and first_negative is None:
            first_negative = j + 2
            break
    total = sum(nu)
    valid = first_negative is None and 0 < total <= 1 + Fraction(1, 10**9)
    weights = np.zeros(N)
    values = np.array([float(x) for x in nu])
    weights[: len(values)] = values
    if valid:
        weights = weights / weights.sum()
    return QsdVector(float(theta), weights, bool(valid), float(1 - total), first_negative)


@dataclass
class QProcessKernel:
    """Doob h-transform of the truncated generator."""

    Q: np.ndarray
    leak: np.ndarray

    def stationary(self) -> np.ndarray:
        """Solve ``pi Q = 0, sum(pi) = 1`` by a direct linear solve."""
        N = self.Q.shape[0]
        A = self.Q.T.copy()
        A[-1, :] = 1.0
        rhs = np.zeros(N)
        rhs[-1] = 1.0
        pi = linalg.solve(A, rhs)
        return pi


def q_process_kernel(data: SpectralData, kernel: TruncatedKernel) -> QProcessKernel:
    h = data.h
    Qt = kernel.Q * (h[None, :] / h[:, None])
    np.fill_diagonal(Qt, np.diag(kernel.Q) + data.alpha)
    return QProcessKernel(Qt, Qt.sum(axis=1))


@dataclass
class CtmcRun:
    occupation: np.ndarray
    n_jumps: int
    return_times: list


def simulate_ctmc(Q: np.ndarray, start: int, horizon: float, rng) -> CtmcRun:
    """Gillespie run of a conservative generator on states 1..N.

    Negative round-off in the diagonal is ignored; the exit rate is the sum
    of the off-diagonal rates. Records time spent per state and the lengths
    of excursions between successive entries into ``start``.
    """
    N = Q.shape[0]
    rows = []
    for i in range(N):
        r = np.clip(Q[i].copy(), 0, None)
        r[i] = 0.0
        total = float(r.sum())
        cum = (np.cumsum(r) / total).tolist() if total > 0 else []
        rows.append((total, cum))
    occupation = np.zeros(N)
    now = 0.0
    state = start - 1
    last_entry = 0.0
    returns = []
    jumps = 0
    expo = rng.expovariate
    unif = rng.random
    while True:
        total, cum = rows[state]
        if total <= 0:
            occupation[state] += horizon - now
            break
        dt = expo(total)
        if now + dt >= horizon:
            occupation[state] += horizon - now
            break
        occupation[state] += dt
        now += dt
        nxt = bisect_right(cum, unif())
        state = min(nxt, N - 1)
        jumps += 1
        if state == start - 1:
            returns.append(now - last_entry)
            last_entry = now
    return CtmcRun(occupation, jumps, returns)


def g_event_probability(kernel: TruncatedKernel, k: int, t: float, start: int = 1) -> tuple[float, float]:
    """Exact ``P(G_t(k), alive at t)`` and ``P(alive at t)`` from ``start``.

    Augments the size chain with the state of the greedy scan (waiting for a
    visit to 1 or to 2, and the number of completed 1 -> 2 alternations,
    capped at ``k``) and propagates the augmented generator.
    """
    N = kernel.N
    Q = kernel.Q
    n_phase = 2 * k + 1  # (count c < k, waiting for 1 or 2) and the terminal count k

    def phase_index(c, waiting_two):
        return n_phase - 1 if c >= k else 2 * c + int(waiting_two)

    def advance(c, waiting_two, new_size):
        if c >= k:
            return k, False
        if waiting_two and new_size == 2:
            return c + 1, False
        if not waiting_two and new_size == 1:
            return c, True
        return c, waiting_two

    dim = N * n_phase
    A = np.zeros((dim, dim))
    phases = [(c, w) for c in range(k) for w in (False, True)] + [(k, False)]
    for c, w in phases:
        pi = phase_index(c, w)
        for i in range(N):
            src = pi * N + i
            A[src, src] = Q[i, i]
            for j in np.nonzero(Q[i])[0]:
                if j == i:
                    continue
                c2, w2 = advance(c, w, j + 1)
                A[src, phase_index(c2, w2) * N + j] += Q[i, j]
    c0, w0 = advance(0, False, start)
    init = np.zeros(dim)
    init[phase_index(c0, w0) * N + start - 1] = 1.0
    final = propagate(A, init, t)
    alive = float(final.sum())
    done = float(final[(n_phase - 1) * N:].sum())
    return done, alive
