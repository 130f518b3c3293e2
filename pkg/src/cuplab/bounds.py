"""Performance-difference bounds between two tabular policies.

Naming follows the usual convention: ``pi_new`` is the candidate policy and
``pi_old`` the reference whose data (visitation, advantages) the surrogate
terms are built from. All bounds are evaluated exactly, with infinite
``(gamma lam)^t`` series truncated at a certified tail.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .cmdp import Cmdp
from .exact import (
    SERIES_TOL,
    _probs,
    classic_difference_gap,
    expected_td_error_vectors,
    mean_td_error,
    policy_transition,
    prop4_identity_check,
    required_t_max,
    series_tail,
    solve_policy,
    td_error_table,
    tilde_gamma,
    visitation,
)

TOL = 1e-8
DENOM_EPS = 1e-12


class DegenerateDenominator(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DivergenceProfile:
    tv: np.ndarray
    kl: np.ndarray
    expected_tv: float
    expected_kl: float
    pi_gap_11: float


def kl_rows(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-state ``KL(p(.|s) || q(.|s))``."""
    return np.sum(p * (np.log(p) - np.log(q)), axis=-1)


def divergence_profile(pi_new, pi_old, d_lambda_old) -> DivergenceProfile:
    """TV and KL between the two policies, state by state and under ``d_lambda_old``.

    ``kl[s]`` is ``KL(pi_old(.|s) || pi_new(.|s))``.
    """
    p_new, p_old = _probs(pi_new), _probs(pi_old)
    if p_new.shape != p_old.shape:
        raise ValueError("policies have different shapes")
    absdiff = np.abs(p_old - p_new)
    tv = 0.5 * absdiff.sum(axis=1)
    kl = np.maximum(kl_rows(p_old, p_new), 0.0)
    d = np.asarray(d_lambda_old)
    return DivergenceProfile(tv, kl, float(d @ tv), float(d @ kl), float(absdiff.sum()))


def mixing_denominator(gamma: float, lam: float, n_states: int, n_actions: int) -> float:
    """``|1 - 2 gamma lam |S||A||``; raises when it vanishes."""
    denom = abs(1.0 - 2.0 * gamma * lam * n_states * n_actions)
    if denom < DENOM_EPS:
        raise DegenerateDenominator("degenerate denominator |1 - 2 gamma lam |S||A||")
    return denom


def delta_gap_vectors(cmdp: Cmdp, pi_new, pi_old, phi, t_max: int,
                      signal: str = "reward") -> np.ndarray:
    """Importance-weighted TD-error gaps along the old policy's dynamics.

    Row ``t`` is ``[P_old^t g](s)`` with ``g(s) = sum_a (pi_new - pi_old)(a|s) dbar(s, a)``,
    the exact value of ``E_old[(pi_new/pi_old - 1) delta_t]``.
    """
    if t_max < 1:
        raise ValueError("t_max must be >= 1")
    p_new, p_old = _probs(pi_new), _probs(pi_old)
    P_old = policy_transition(cmdp, p_old)
    g = ((p_new - p_old) * mean_td_error(cmdp, phi, signal)).sum(axis=1)
    out = np.empty((t_max, cmdp.n_states))
    for t in range(t_max):
        out[t] = g
        g = P_old @ g
    return out


def epsilon_sup(cmdp: Cmdp, pi_new, phi, t_max: int, signal: str = "reward") -> float:
    """``sup_{t < t_max} max_s E[|delta_t|]`` for trajectories of ``pi_new`` started at ``s``."""
    p_new = _probs(pi_new)
    abs_td = np.einsum("sat,sat->sa", cmdp.transition, np.abs(td_error_table(cmdp, phi, signal)))
    g = (p_new * abs_td).sum(axis=1)
    P_new = policy_transition(cmdp, p_new)
    best = -np.inf
    for _ in range(max(1, t_max)):
        best = max(best, float(g.max()))
        g = P_new @ g
    return best


@dataclass(frozen=True, eq=False)
class Theorem1Result:
    j_diff: float
    l_minus: float
    l_plus: float
    eps: np.ndarray
    l_minus_direct: float
    l_plus_direct: float
    t_max: int
    tail_bound: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.l_minus - self.tol <= self.j_diff <= self.l_plus + self.tol

    @property
    def passed_direct(self) -> bool:
        return self.l_minus_direct - self.tol <= self.j_diff <= self.l_plus_direct + self.tol


def theorem1_bounds(cmdp: Cmdp, pi_new, pi_old, phi=None, lam: float = 0.0, p: int = 1,
                    t_max: int | None = None, signal: str = "reward",
                    tol: float = TOL) -> Theorem1Result:
    """Sandwich ``L^- <= J(new) - J(old) <= L^+`` for an arbitrary state function ``phi``.

    ``l_minus``/``l_plus`` use the importance-weighted gaps of
    :func:`delta_gap_vectors`. ``l_minus_direct``/``l_plus_direct`` replace
    them with ``<d_old, delta_new_t - delta_old_t>``, each expected TD error
    taken under its own policy's dynamics; the two coincide at ``t = 0``.
    ``phi`` defaults to the old policy's value function. ``p`` is 1 or 2 with
    conjugate ``q``.
    """
    if p not in (1, 2):
        raise ValueError("p must be 1 or 2")
    if not 0.0 <= lam < 1.0:
        raise ValueError("lambda must lie in [0, 1)")
    q = np.inf if p == 1 else 2
    p_new, p_old = _probs(pi_new), _probs(pi_old)
    new = solve_policy(cmdp, p_new, signal, lam)
    old = solve_policy(cmdp, p_old, signal, lam)
    if phi is None:
        phi = old.V
    phi = np.asarray(phi, dtype=float)
    gamma, S = cmdp.gamma, cmdp.n_states
    tg = new.tilde_gamma

    dbar = mean_td_error(cmdp, phi, signal)
    d_gap = float(np.linalg.norm(new.d_lambda - old.d_lambda, ord=p))
    m_new = float(np.max(np.abs((p_new * dbar).sum(axis=1))))
    m_old = float(np.max(np.abs((p_old * dbar).sum(axis=1))))
    m_gap = float(np.max(np.abs(((p_new - p_old) * dbar).sum(axis=1))))
    # per-step magnitude bound for the summands of either form
    per_step = max(m_gap, m_new + m_old) + d_gap * S ** (1.0 / q if q != np.inf else 0.0) * m_new
    needed = required_t_max(gamma, lam, per_step / (1.0 - tg))
    if t_max is None:
        t_max = needed
    elif t_max < needed:
        raise ValueError(f"t_max={t_max} leaves a truncation tail above {SERIES_TOL:g}; "
                         f"need t_max >= {needed}")

    gaps = delta_gap_vectors(cmdp, p_new, p_old, phi, t_max, signal)
    td_new = expected_td_error_vectors(cmdp, p_new, phi, t_max, signal)
    td_old = expected_td_error_vectors(cmdp, p_old, phi, t_max, signal)
    eps = d_gap * np.linalg.norm(td_new, ord=q, axis=1)
    w = (gamma * lam) ** np.arange(t_max)
    scale = 1.0 / (1.0 - tg)
    centre = gaps @ old.d_lambda
    centre_direct = (td_new - td_old) @ old.d_lambda
    spread = scale * (w @ eps)
    j_diff = float(cmdp.rho0 @ new.V - cmdp.rho0 @ old.V)
    tail = series_tail(gamma, lam, per_step, t_max) * scale
    return Theorem1Result(
        j_diff=j_diff,
        l_minus=float(scale * (w @ centre) - spread),
        l_plus=float(scale * (w @ centre) + spread),
        eps=eps,
        l_minus_direct=float(scale * (w @ centre_direct) - spread),
        l_plus_direct=float(scale * (w @ centre_direct) + spread),
        t_max=int(t_max),
        tail_bound=float(tail),
        tol=tol,
    )


def _surrogate_parts(cmdp: Cmdp, pi_new, pi_old, lam: float, signal: str, t_max):
    p_new, p_old = _probs(pi_new), _probs(pi_old)
    old = solve_policy(cmdp, p_old, signal, lam)
    if t_max is None:
        t_max = required_t_max(cmdp.gamma, lam, float(np.max(np.abs(old.A))) + 1.0)
    eps = epsilon_sup(cmdp, p_new, old.V, t_max, signal)
    profile = divergence_profile(p_new, p_old, old.d_lambda)
    # old.A_gae is the exact GAE with phi = V_old
    surrogate = float(old.d_lambda @ (p_new * old.A_gae).sum(axis=1))
    return old, eps, profile, surrogate


def _penalty_coefficient(cmdp: Cmdp, lam: float, eps: float) -> float:
    denom = mixing_denominator(cmdp.gamma, lam, cmdp.n_states, cmdp.n_actions)
    return 2.0 * cmdp.gamma * (1.0 - lam) * eps / ((1.0 - cmdp.gamma * lam) * denom)


def _gae_bound(cmdp, pi_new, pi_old, lam, t_max, signal, sign, use_kl):
    old, eps, profile, surrogate = _surrogate_parts(cmdp, pi_new, pi_old, lam, signal, t_max)
    coef = _penalty_coefficient(cmdp, lam, eps)
    div = np.sqrt(profile.expected_kl / 2.0) if use_kl else profile.expected_tv
    return (surrogate + sign * coef * div) / (1.0 - old.tilde_gamma)


def prop1_lower_bound(cmdp: Cmdp, pi_new, pi_old, lam: float, t_max: int | None = None) -> float:
    """GAE-based lower bound on ``J(new) - J(old)`` with a TV penalty."""
    return _gae_bound(cmdp, pi_new, pi_old, lam, t_max, "reward", -1.0, False)


def prop2_cost_upper_bound(cmdp: Cmdp, pi_new, pi_old, lam: float,
                           t_max: int | None = None) -> float:
    """GAE-based upper bound on ``Jc(new) - Jc(old)`` with a TV penalty."""
    return _gae_bound(cmdp, pi_new, pi_old, lam, t_max, "cost", +1.0, False)


def kl_substituted_bounds(cmdp: Cmdp, pi_new, pi_old, lam: float,
                          t_max: int | None = None) -> tuple[float, float]:
    """Both GAE bounds with ``E[TV]`` replaced by ``sqrt(E[KL] / 2)``."""
    return (_gae_bound(cmdp, pi_new, pi_old, lam, t_max, "reward", -1.0, True),
            _gae_bound(cmdp, pi_new, pi_old, lam, t_max, "cost", +1.0, True))


def lambda0_penalties(cmdp: Cmdp, pi_new, pi_old) -> tuple[float, float]:
    """Penalty terms of the lambda = 0 GAE bound and of the classic CPO-style bound.

    Both are returned already multiplied by ``1/(1-gamma)``; the GAE version
    uses coefficient ``2 gamma eps`` and the CPO version ``2 gamma eps / (1-gamma)``.
    """
    _, eps, profile, _ = _surrogate_parts(cmdp, pi_new, pi_old, 0.0, "reward", None)
    g = cmdp.gamma
    ours = 2.0 * g * eps * profile.expected_tv / (1.0 - g)
    cpo = 2.0 * g * eps / (1.0 - g) * profile.expected_tv / (1.0 - g)
    return ours, cpo


def cpo_lower_bound(cmdp: Cmdp, pi_new, pi_old) -> float:
    _, _, _, surrogate = _surrogate_parts(cmdp, pi_new, pi_old, 0.0, "reward", None)
    _, cpo = lambda0_penalties(cmdp, pi_new, pi_old)
    return surrogate / (1.0 - cmdp.gamma) - cpo


@dataclass(frozen=True)
class Lemma1Result:
    lhs: float
    rhs: float
    denom_flag: bool

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + TOL


def lemma1_visitation_gap(cmdp: Cmdp, pi_new, pi_old, lam: float) -> Lemma1Result:
    """``||d_old - d_new||_1`` against the closed-form TV bound (diagnostic only)."""
    p_new, p_old = _probs(pi_new), _probs(pi_old)
    gamma = cmdp.gamma
    tg = tilde_gamma(gamma, lam)
    new = solve_policy(cmdp, p_new, "reward", lam)
    old = solve_policy(cmdp, p_old, "reward", lam)
    lhs = float(np.abs(old.d_lambda - new.d_lambda).sum())
    profile = divergence_profile(p_new, p_old, new.d_lambda)
    denom = mixing_denominator(gamma, lam, cmdp.n_states, cmdp.n_actions)
    rhs = (1.0 - gamma * lam) / denom * 2.0 * profile.expected_tv / (1.0 - tg)
    flag = 1.0 - gamma * lam * profile.pi_gap_11 <= 0.0
    return Lemma1Result(lhs, float(rhs), bool(flag))


@dataclass(frozen=True)
class Theorem2Result:
    chi_k: float
    eps_v: float
    eps_c: float
    improvement_floor: float
    cost_ceiling: float
    j_delta: float
    j_cost_new: float
    denom_flag: bool
    tol: float = TOL

    @property
    def improvement_pass(self) -> bool:
        return self.j_delta >= self.improvement_floor - self.tol

    @property
    def cost_pass(self) -> bool:
        return self.j_cost_new <= self.cost_ceiling + self.tol


def theorem2_update_bounds(cmdp: Cmdp, pi_k, pi_k_half, pi_k1, alpha_k: float, beta_k: float,
                           lam: float, t_max: int | None = None,
                           tol: float = TOL) -> Theorem2Result:
    """Per-update improvement floor and cost ceiling for one CUP iteration."""
    p_k, p_half, p_next = _probs(pi_k), _probs(pi_k_half), _probs(pi_k1)
    gamma = cmdp.gamma
    rew = solve_policy(cmdp, p_k, "reward", lam)
    cst = solve_policy(cmdp, p_k, "cost", lam)
    if t_max is None:
        t_max = required_t_max(gamma, lam, 1.0)
    chi = float(rew.d_lambda @ np.maximum(kl_rows(p_k, p_half), 0.0))
    eps_v = epsilon_sup(cmdp, p_next, rew.V, t_max, "reward")
    eps_c = epsilon_sup(cmdp, p_next, cst.V, t_max, "cost")
    denom = mixing_denominator(gamma, lam, cmdp.n_states, cmdp.n_actions)
    k = gamma * (1.0 - lam) * np.sqrt(2.0 * chi) / ((1.0 - gamma) * denom)
    new_r = solve_policy(cmdp, p_next, "reward", 0.0)
    new_c = solve_policy(cmdp, p_next, "cost", 0.0)
    j_delta = float(cmdp.rho0 @ new_r.V - cmdp.rho0 @ rew.V)
    pi_gap = float(np.abs(p_next - p_k).sum())
    return Theorem2Result(
        chi_k=chi,
        eps_v=eps_v,
        eps_c=eps_c,
        improvement_floor=float(-k * alpha_k * eps_v),
        cost_ceiling=float(cmdp.cost_limit + k * beta_k * eps_c),
        j_delta=j_delta,
        j_cost_new=float(cmdp.rho0 @ new_c.V),
        denom_flag=bool(1.0 - gamma * lam * pi_gap <= 0.0),
        tol=tol,
    )


def remark2_bounds(gamma: float, alpha_k: float, beta_k: float, chi_k: float,
                   eps_v: float, eps_c: float, b: float) -> tuple[float, float]:
    """The lambda -> 0 form of the per-update floor and ceiling."""
    k = gamma * np.sqrt(2.0 * chi_k) / (1.0 - gamma)
    return float(-k * alpha_k * eps_v), float(b + k * beta_k * eps_c)


@dataclass(frozen=True)
class BoundReport:
    lam: float
    j_diff: float
    j_cost_diff: float
    l_minus: float
    l_plus: float
    l_minus_direct: float
    l_plus_direct: float
    prop1_lower: float
    prop2_cost_upper: float
    kl_prop1_lower: float
    kl_prop2_upper: float
    epsilon_v: float
    epsilon_c: float
    expected_tv: float
    expected_kl: float
    lemma1_lhs: float
    lemma1_rhs: float
    denom_flag: bool
    classic_gap: float
    prop4_gap: float
    t_max: int
    tail_bound: float
    pass_theorem1: bool
    pass_theorem1_direct: bool
    pass_prop1: bool
    pass_prop2: bool
    pass_prop3_order: bool
    pass_identities: bool

    @property
    def margins(self) -> dict:
        return {
            "theorem1_lower": self.j_diff - self.l_minus,
            "theorem1_upper": self.l_plus - self.j_diff,
            "prop1": self.j_diff - self.prop1_lower,
            "prop2": self.prop2_cost_upper - self.j_cost_diff,
        }

    def to_dict(self) -> dict:
        return asdict(self)


def bound_report(cmdp: Cmdp, pi_new, pi_old, lam: float, phi_probe=None,
                 tol: float = TOL) -> BoundReport:
    """Evaluate every bound and identity for one policy pair at one lambda.

    ``phi_probe`` is an arbitrary state function used for the objective
    identity check (defaults to zeros).
    """
    p_new, p_old = _probs(pi_new), _probs(pi_old)
    t1 = theorem1_bounds(cmdp, p_new, p_old, lam=lam, tol=tol)
    cost_new = solve_policy(cmdp, p_new, "cost", lam)
    cost_old = solve_policy(cmdp, p_old, "cost", lam)
    j_cost_diff = float(cmdp.rho0 @ cost_new.V - cmdp.rho0 @ cost_old.V)
    p1 = prop1_lower_bound(cmdp, p_new, p_old, lam)
    p2 = prop2_cost_upper_bound(cmdp, p_new, p_old, lam)
    k1, k2 = kl_substituted_bounds(cmdp, p_new, p_old, lam)
    _, eps_v, profile, _ = _surrogate_parts(cmdp, p_new, p_old, lam, "reward", None)
    _, eps_c, _, _ = _surrogate_parts(cmdp, p_new, p_old, lam, "cost", None)
    lem = lemma1_visitation_gap(cmdp, p_new, p_old, lam)
    if phi_probe is None:
        phi_probe = np.zeros(cmdp.n_states)
    classic = classic_difference_gap(cmdp, p_new, p_old)
    ident = prop4_identity_check(cmdp, p_new, phi_probe, lam)
    return BoundReport(
        lam=float(lam),
        j_diff=t1.j_diff,
        j_cost_diff=j_cost_diff,
        l_minus=t1.l_minus,
        l_plus=t1.l_plus,
        l_minus_direct=t1.l_minus_direct,
        l_plus_direct=t1.l_plus_direct,
        prop1_lower=p1,
        prop2_cost_upper=p2,
        kl_prop1_lower=k1,
        kl_prop2_upper=k2,
        epsilon_v=eps_v,
        epsilon_c=eps_c,
        expected_tv=profile.expected_tv,
        expected_kl=profile.expected_kl,
        lemma1_lhs=lem.lhs,
        lemma1_rhs=lem.rhs,
        denom_flag=lem.denom_flag,
        classic_gap=classic,
        prop4_gap=ident.gap,
        t_max=t1.t_max,
        tail_bound=t1.tail_bound,
        pass_theorem1=t1.passed,
        pass_theorem1_direct=t1.passed_direct,
        pass_prop1=p1 <= t1.j_diff + tol,
        pass_prop2=j_cost_diff <= p2 + tol,
        pass_prop3_order=(k1 <= p1 + tol) and (k2 >= p2 - tol),
        pass_identities=max(classic, ident.gap) < tol,
    )
