"""Exact dynamic-programming quantities for a fixed tabular policy.

Everything here is a dense linear-algebra evaluation: value and advantage
functions, discounted and lambda-weighted state visitation, the lambda-mixed
transition matrix and the exact (expected) GAE advantage for an arbitrary
state function ``phi``.

Distributions are pushed forward as row vectors, so a visitation vector
solves ``(I - g P^T) d = (1 - g) rho0``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmdp import Cmdp, SoftmaxPolicy, policy_distribution

SIGNALS = ("reward", "cost")
SERIES_TOL = 1e-10


class LinearSolveError(RuntimeError):
    """A dense solve failed or left a residual above tolerance."""


def dense_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        x = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as err:
        raise LinearSolveError(str(err)) from err
    resid = np.max(np.abs(A @ x - b)) if x.size else 0.0
    scale = 1.0 + (np.max(np.abs(b)) if b.size else 0.0)
    if not np.isfinite(resid) or resid >= 1e-10 * scale:
        raise LinearSolveError(f"residual {resid:.3e} exceeds {1e-10 * scale:.3e}")
    return x


def tilde_gamma(gamma: float, lam: float) -> float:
    """Effective discount ``gamma (1 - lam) / (1 - gamma lam)`` of the lambda-mixed chain."""
    return gamma * (1.0 - lam) / (1.0 - gamma * lam)


def required_t_max(gamma: float, lam: float, bound: float, tol: float = SERIES_TOL) -> int:
    """Smallest n with ``(gamma lam)^n * bound / (1 - gamma lam) < tol``."""
    gl = gamma * lam
    if gl == 0.0 or bound == 0.0:
        return 1
    n = np.log(tol * (1.0 - gl) / bound) / np.log(gl)
    return max(1, int(np.floor(n)) + 1)


def series_tail(gamma: float, lam: float, bound: float, t_max: int) -> float:
    """Certified bound on ``sum_{t >= t_max} (gamma lam)^t * bound``."""
    gl = gamma * lam
    return gl ** t_max * bound / (1.0 - gl)


def _check_signal(signal):
    if signal not in SIGNALS:
        raise ValueError(f"signal must be one of {SIGNALS}, got {signal!r}")


def _check_lambda(lam):
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")


def _probs(policy) -> np.ndarray:
    return policy_distribution(policy) if isinstance(policy, SoftmaxPolicy) else np.asarray(policy)


def policy_transition(cmdp: Cmdp, pi: np.ndarray) -> np.ndarray:
    return np.einsum("sa,sat->st", pi, cmdp.transition)


def expected_signal(cmdp: Cmdp, signal: str) -> np.ndarray:
    """One-step expected signal per (s, a)."""
    if signal == "reward":
        return np.einsum("sat,sat->sa", cmdp.transition, cmdp.reward)
    return np.array(cmdp.cost)


def td_error_table(cmdp: Cmdp, phi: np.ndarray, signal: str = "reward") -> np.ndarray:
    """``delta[s, a, s'] = signal + gamma phi(s') - phi(s)`` for every transition."""
    _check_signal(signal)
    phi = np.asarray(phi, dtype=float)
    if signal == "reward":
        base = cmdp.reward
    else:
        base = np.broadcast_to(cmdp.cost[:, :, None], cmdp.transition.shape)
    return base + cmdp.gamma * phi[None, None, :] - phi[:, None, None]


def mean_td_error(cmdp: Cmdp, phi: np.ndarray, signal: str = "reward") -> np.ndarray:
    """Expected one-step TD error per (s, a) under the true dynamics."""
    return np.einsum("sat,sat->sa", cmdp.transition, td_error_table(cmdp, phi, signal))


def lambda_transition(P_pi: np.ndarray, gamma: float, lam: float) -> np.ndarray:
    """``(1 - gamma lam) P (I - gamma lam P)^{-1}``, the closed form of the mixed series."""
    n = P_pi.shape[0]
    gl = gamma * lam
    # P and (I - gl P)^{-1} commute, so solve from the right
    inv_times_P = dense_solve(np.eye(n) - gl * P_pi, P_pi)
    return (1.0 - gl) * inv_times_P


def lambda_transition_series(P_pi: np.ndarray, gamma: float, lam: float, n_terms: int) -> np.ndarray:
    gl = gamma * lam
    out = np.zeros_like(P_pi)
    Pk = P_pi.copy()
    for t in range(n_terms):
        out += gl ** t * Pk
        Pk = Pk @ P_pi
    return (1.0 - gl) * out


def visitation(P: np.ndarray, rho0: np.ndarray, discount: float) -> np.ndarray:
    """Normalised discounted visitation ``(1 - g) (I - g P^T)^{-1} rho0``."""
    n = P.shape[0]
    if discount == 0.0:
        return np.array(rho0, dtype=float)
    return (1.0 - discount) * dense_solve(np.eye(n) - discount * P.T, rho0)


def exact_gae(cmdp: Cmdp, policy, phi, lam: float, signal: str = "reward") -> np.ndarray:
    """Expected GAE advantage ``sum_l (gamma lam)^l E[delta_{t+l} | s_t=s, a_t=a]``.

    The ``l = 0`` term is action-conditioned; later terms follow the policy,
    giving ``dbar(s,a) + gamma lam sum_s' P(s'|s,a) [(I - gamma lam P_pi)^{-1} dbar_pi](s')``.
    """
    _check_signal(signal)
    _check_lambda(lam)
    pi = _probs(policy)
    dbar = mean_td_error(cmdp, phi, signal)
    dbar_pi = (pi * dbar).sum(axis=1)
    gl = cmdp.gamma * lam
    if gl == 0.0:
        return dbar
    P_pi = policy_transition(cmdp, pi)
    future = dense_solve(np.eye(cmdp.n_states) - gl * P_pi, dbar_pi)
    return dbar + gl * cmdp.transition @ future


@dataclass(frozen=True, eq=False)
class DpSolution:
    signal: str
    lam: float
    P_pi: np.ndarray
    r_pi: np.ndarray
    c_pi: np.ndarray
    V: np.ndarray
    Q: np.ndarray
    A: np.ndarray
    d_rho0: np.ndarray
    P_lambda: np.ndarray
    r_lambda: np.ndarray
    d_lambda: np.ndarray
    tilde_gamma: float
    A_gae: np.ndarray

    def to_dict(self) -> dict:
        out = {}
        for key, value in self.__dict__.items():
            out[key] = value.tolist() if isinstance(value, np.ndarray) else value
        return out


def solve_policy(cmdp: Cmdp, policy, signal: str = "reward", lam: float = 0.0) -> DpSolution:
    """Solve every exact quantity for ``policy`` on ``cmdp`` for one signal."""
    _check_signal(signal)
    _check_lambda(lam)
    gamma = cmdp.gamma
    n = cmdp.n_states
    pi = _probs(policy)
    P_pi = policy_transition(cmdp, pi)
    r_sa = expected_signal(cmdp, "reward")
    r_pi = (pi * r_sa).sum(axis=1)
    c_pi = (pi * cmdp.cost).sum(axis=1)
    sig_pi = r_pi if signal == "reward" else c_pi
    sig_sa = r_sa if signal == "reward" else np.array(cmdp.cost)

    V = dense_solve(np.eye(n) - gamma * P_pi, sig_pi)
    Q = sig_sa + gamma * cmdp.transition @ V
    A = Q - V[:, None]
    d_rho0 = visitation(P_pi, cmdp.rho0, gamma)

    tg = tilde_gamma(gamma, lam)
    P_lam = lambda_transition(P_pi, gamma, lam)
    r_lam = dense_solve(np.eye(n) - gamma * lam * P_pi, sig_pi)
    d_lam = visitation(P_lam, cmdp.rho0, tg)
    A_gae = exact_gae(cmdp, pi, V, lam, signal)
    return DpSolution(signal, float(lam), P_pi, r_pi, c_pi, V, Q, A, d_rho0,
                      P_lam, r_lam, d_lam, tg, A_gae)


def objective_j(cmdp: Cmdp, policy, signal: str = "reward") -> float:
    """Discounted return ``rho0 . V`` (or the cost-return for ``signal='cost'``)."""
    _check_signal(signal)
    pi = _probs(policy)
    P_pi = policy_transition(cmdp, pi)
    sig_pi = (pi * expected_signal(cmdp, signal)).sum(axis=1)
    V = dense_solve(np.eye(cmdp.n_states) - cmdp.gamma * P_pi, sig_pi)
    return float(cmdp.rho0 @ V)


def objective_from_visitation(cmdp: Cmdp, policy, signal: str = "reward") -> float:
    pi = _probs(policy)
    P_pi = policy_transition(cmdp, pi)
    sig_pi = (pi * expected_signal(cmdp, signal)).sum(axis=1)
    d = visitation(P_pi, cmdp.rho0, cmdp.gamma)
    return float(d @ sig_pi / (1.0 - cmdp.gamma))


def expected_td_error_vectors(cmdp: Cmdp, policy, phi, t_max: int,
                              signal: str = "reward") -> np.ndarray:
    """Rows ``t = 0 .. t_max-1`` of ``delta_t(s) = [P_pi^t dbar_pi](s)``.

    ``dbar_pi(s)`` is the one-step expected TD error of ``phi`` under the
    policy; ``P_pi^0`` is the identity.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    pi = _probs(policy)
    P_pi = policy_transition(cmdp, pi)
    v = (pi * mean_td_error(cmdp, phi, signal)).sum(axis=1)
    out = np.empty((t_max, cmdp.n_states))
    for t in range(t_max):
        out[t] = v
        v = P_pi @ v
    return out


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    gap: float
    tail_bound: float
    t_max: int


def prop4_identity_check(cmdp: Cmdp, policy, phi, lam: float, t_max: int | None = None,
                         signal: str = "reward") -> IdentityCheck:
    """Compare ``J`` with ``E_rho0[phi] + 1/(1-g~) E_{d^lam}[sum_t (gamma lam)^t delta_t]``."""
    if not 0.0 <= lam < 1.0:
        raise ValueError("identity check needs lambda in [0, 1)")
    pi = _probs(policy)
    phi = np.asarray(phi, dtype=float)
    sol = solve_policy(cmdp, pi, signal, lam)
    dbar_pi = (pi * mean_td_error(cmdp, phi, signal)).sum(axis=1)
    sup = float(np.max(np.abs(dbar_pi))) if dbar_pi.size else 0.0
    if t_max is None:
        t_max = required_t_max(cmdp.gamma, lam, sup)
    deltas = expected_td_error_vectors(cmdp, pi, phi, t_max, signal)
    weights = (cmdp.gamma * lam) ** np.arange(t_max)
    series = weights @ (deltas @ sol.d_lambda)
    rhs = float(cmdp.rho0 @ phi + series / (1.0 - sol.tilde_gamma))
    lhs = float(cmdp.rho0 @ sol.V)
    tail = series_tail(cmdp.gamma, lam, sup, t_max) / (1.0 - sol.tilde_gamma)
    return IdentityCheck(lhs, rhs, abs(lhs - rhs), tail, t_max)


def classic_difference_gap(cmdp: Cmdp, pi_new, pi_old, signal: str = "reward") -> float:
    """``|J(new) - J(old) - 1/(1-gamma) E_{d_new, a~new}[A_old]|``."""
    new = solve_policy(cmdp, pi_new, signal)
    old = solve_policy(cmdp, pi_old, signal)
    p_new = _probs(pi_new)
    j_diff = cmdp.rho0 @ new.V - cmdp.rho0 @ old.V
    surrogate = new.d_rho0 @ (p_new * old.A).sum(axis=1) / (1.0 - cmdp.gamma)
    return float(abs(j_diff - surrogate))
