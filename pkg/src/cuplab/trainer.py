"""CUP training loop over tabular softmax policies, plus a primal-dual Lagrangian baseline.

Both surrogate losses have closed-form gradients in the logits, so the
optimizer is plain minibatch SGD with a fixed learning rate.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .bounds import DegenerateDenominator, kl_rows, theorem2_update_bounds
from .cmdp import Cmdp, SoftmaxPolicy, softmax
from .exact import objective_j
from .sampler import GaeTables, TrajectoryBatch, compute_gae, sample_trajectories

log = logging.getLogger(__name__)

SQRT_EPS = 1e-12
EXACT_LIMIT = 4096

_TAGS = {"improve": 1, "project": 2, "sample": 3, "baseline": 4}


@dataclass(frozen=True)
class CupConfig:
    """Training hyper-parameters.

    ``gamma`` and ``cost_limit`` default to ``None``, meaning "take the value
    stored in the environment".
    """

    gamma: float | None = None
    lambda_gae: float = 0.95
    horizon_T: int = 200
    episodes_M: int = 25
    alpha: float = 0.15
    beta: float = 0.15
    nu_init: float = 0.0
    nu_max: float = 2.0
    nu_lr: float = 0.01
    policy_lr: float = 3e-4
    optimization_epochs: int = 10
    minibatch: int = 64
    iterations: int = 150
    cost_limit: float | None = None
    seed: int = 0
    exact_logging: bool = True
    initial_logits: list | None = None

    def __post_init__(self):
        for name in ("alpha", "nu_lr", "policy_lr"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.nu_max < 0:
            raise ValueError("nu_max must be >= 0")
        if not 0.0 <= self.nu_init <= self.nu_max:
            raise ValueError("nu_init must lie in [0, nu_max]")
        if not 0.0 <= self.lambda_gae <= 1.0:
            raise ValueError("lambda_gae must lie in [0, 1]")
        if self.gamma is not None and not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.cost_limit is not None and not self.cost_limit >= 0:
            raise ValueError("cost_limit must be >= 0")
        for name in ("horizon_T", "episodes_M", "optimization_epochs", "minibatch"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def resolve(self, cmdp: Cmdp) -> Cmdp:
        changes = {}
        if self.gamma is not None:
            changes["gamma"] = self.gamma
        if self.cost_limit is not None:
            changes["cost_limit"] = self.cost_limit
        return cmdp.replace(**changes) if changes else cmdp


def _stream(seed: int, k: int, tag: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(k), _TAGS[tag]])


def _visited(batch: TrajectoryBatch) -> np.ndarray:
    return batch.states[:, :-1].reshape(-1)


def empirical_kl(pi_a, pi_b, batch: TrajectoryBatch) -> float:
    """Mean over visited ``s_{i,t}`` (``t < T``) of ``KL(pi_a(.|s) || pi_b(.|s))``."""
    pa = softmax(pi_a.logits) if isinstance(pi_a, SoftmaxPolicy) else np.asarray(pi_a)
    pb = softmax(pi_b.logits) if isinstance(pi_b, SoftmaxPolicy) else np.asarray(pi_b)
    per_state = kl_rows(pa, pb)
    return float(per_state[_visited(batch)].mean())


@dataclass(frozen=True, eq=False)
class Samples:
    """Flattened ``(s, a, advantage)`` triples plus the behaviour probabilities."""

    states: np.ndarray
    actions: np.ndarray
    adv: np.ndarray
    behaviour: np.ndarray
    shape: tuple

    @classmethod
    def from_batch(cls, batch: TrajectoryBatch, adv: np.ndarray, pi_k: SoftmaxPolicy):
        s = _visited(batch)
        a = batch.actions.reshape(-1)
        return cls(s, a, np.asarray(adv, dtype=float).reshape(-1),
                   softmax(pi_k.logits)[s, a], pi_k.shape)

    def take(self, idx) -> "Samples":
        return Samples(self.states[idx], self.actions[idx], self.adv[idx],
                       self.behaviour[idx], self.shape)

    def __len__(self):
        return self.states.size


def _ratio_term(theta: np.ndarray, data: Samples):
    """``mean[pi_theta(a|s) / pi_k(a|s) * adv]`` and its gradient."""
    S, A = data.shape
    probs = softmax(theta)
    n = len(data)
    ratio = probs[data.states, data.actions] / data.behaviour
    w = ratio * data.adv / n
    g_sa = np.bincount(data.states * A + data.actions, weights=w, minlength=S * A).reshape(S, A)
    g_s = np.bincount(data.states, weights=w, minlength=S)
    return float(w.sum()), g_sa - g_s[:, None] * probs


def _kl_term(theta: np.ndarray, anchor: np.ndarray, states: np.ndarray):
    """Mean over ``states`` of ``KL(anchor || pi_theta)`` and its gradient."""
    S = theta.shape[0]
    probs = softmax(theta)
    weight = np.bincount(states, minlength=S) / states.size
    value = float(weight @ kl_rows(anchor, probs))
    return value, weight[:, None] * (probs - anchor)


def improvement_objective(theta, data: Samples, anchor: np.ndarray, alpha: float):
    """Value and gradient of ``mean[ratio * A] - alpha * sqrt(KL(pi_k || pi_theta) + 1e-12)``."""
    r, g_r = _ratio_term(theta, data)
    kl, g_kl = _kl_term(theta, anchor, data.states)
    root = np.sqrt(kl + SQRT_EPS)
    return r - alpha * root, g_r - alpha * g_kl / (2.0 * root)


def projection_objective(theta, data: Samples, anchor: np.ndarray, cost_weight: float):
    """Value and gradient of ``KL(pi_half || pi_theta) + cost_weight * mean[ratio * A^C]``."""
    r, g_r = _ratio_term(theta, data)
    kl, g_kl = _kl_term(theta, anchor, data.states)
    return kl + cost_weight * r, g_kl + cost_weight * g_r


def _sgd(theta0, data: Samples, objective, sign: float, config: CupConfig,
         rng: np.random.Generator) -> np.ndarray:
    theta = np.array(theta0, dtype=float)
    n = len(data)
    mb = min(int(config.minibatch), n)
    for _ in range(config.optimization_epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            _, grad = objective(theta, data.take(order[start:start + mb]))
            theta += sign * config.policy_lr * grad
    return theta


@dataclass(frozen=True)
class StepResult:
    policy: SoftmaxPolicy
    fallback: bool


def improvement_step(cmdp: Cmdp, pi_k: SoftmaxPolicy, batch: TrajectoryBatch, gae: GaeTables,
                     config: CupConfig, iteration: int = 0) -> StepResult:
    """KL-penalised surrogate ascent from ``pi_k``; falls back to ``pi_k`` if it does not help."""
    data = Samples.from_batch(batch, gae.adv, pi_k)
    anchor = softmax(pi_k.logits)
    obj = lambda th, d: improvement_objective(th, d, anchor, config.alpha)
    with np.errstate(all="ignore"):
        theta = _sgd(pi_k.logits, data, obj, +1.0, config, _stream(config.seed, iteration, "improve"))
        before, _ = obj(np.array(pi_k.logits), data)
        after, _ = obj(theta, data) if np.all(np.isfinite(theta)) else (np.nan, None)
    if not np.isfinite(after):
        log.warning("iteration %d: non-finite improvement objective, keeping pi_k", iteration)
        return StepResult(pi_k, True)
    if after < before - 1e-12:
        log.warning("iteration %d: improvement step decreased the surrogate, keeping pi_k", iteration)
        return StepResult(pi_k, True)
    return StepResult(SoftmaxPolicy(theta), False)


def update_nu(nu: float, jc_hat: float, b: float, config: CupConfig) -> float:
    return float(np.clip(nu + config.nu_lr * (jc_hat - b), 0.0, config.nu_max))


def projection_step(cmdp: Cmdp, pi_k: SoftmaxPolicy, pi_k_half: SoftmaxPolicy,
                    batch: TrajectoryBatch, gae: GaeTables, jc_hat: float, nu_k: float,
                    config: CupConfig, iteration: int = 0) -> tuple[SoftmaxPolicy, float]:
    """Dual update of ``nu`` followed by KL-anchored descent on the cost surrogate."""
    gamma, lam = cmdp.gamma, config.lambda_gae
    nu = update_nu(nu_k, jc_hat, cmdp.cost_limit, config)
    data = Samples.from_batch(batch, gae.adv_cost, pi_k)
    anchor = softmax(pi_k_half.logits)
    weight = nu * (1.0 - gamma * lam) / (1.0 - gamma)
    obj = lambda th, d: projection_objective(th, d, anchor, weight)
    with np.errstate(all="ignore"):
        theta = _sgd(pi_k_half.logits, data, obj, -1.0, config,
                     _stream(config.seed, iteration, "project"))
        ok = np.all(np.isfinite(theta)) and np.isfinite(obj(theta, data)[0])
    if not ok:
        log.warning("iteration %d: non-finite projection objective, keeping pi_k_half", iteration)
        return pi_k_half, nu
    return SoftmaxPolicy(theta), nu


def fit_critics(batch: TrajectoryBatch, gae: GaeTables, v_prev, vc_prev):
    """Tabular least squares: each visited state's value is the mean of its targets."""
    v, vc = np.array(v_prev, dtype=float), np.array(vc_prev, dtype=float)
    s = _visited(batch)
    n = v.size
    counts = np.bincount(s, minlength=n)
    seen = counts > 0
    v[seen] = (np.bincount(s, weights=gae.v_target.reshape(-1), minlength=n)[seen] / counts[seen])
    vc[seen] = (np.bincount(s, weights=gae.v_target_cost.reshape(-1), minlength=n)[seen]
                / counts[seen])
    return v, vc


@dataclass(frozen=True)
class TrainRow:
    iteration: int
    J_hat: float
    Jc_hat: float
    J_exact: float
    Jc_exact: float
    nu: float
    empirical_kl_step1: float
    empirical_kl_step2: float
    chi_k: float
    t2_improvement_pass: bool | None
    t2_cost_pass: bool | None
    denom_flag: bool | None
    fallback: bool


COLUMNS = tuple(f.name for f in fields(TrainRow))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % value


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)
    final_policy: SoftmaxPolicy | None = None
    initial_policy: SoftmaxPolicy | None = None
    last_batch: TrajectoryBatch | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(COLUMNS)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in asdict(row).values()])
        return buf.getvalue()


def _initial_policy(cmdp: Cmdp, config: CupConfig) -> SoftmaxPolicy:
    if config.initial_logits is None:
        return SoftmaxPolicy.uniform(cmdp.n_states, cmdp.n_actions)
    logits = np.asarray(config.initial_logits, dtype=float)
    if logits.shape != (cmdp.n_states, cmdp.n_actions):
        raise ValueError(f"initial_logits shape {logits.shape} does not match the environment")
    return SoftmaxPolicy(logits)


def _run(cmdp: Cmdp, config: CupConfig, baseline: bool) -> TrainLog:
    cmdp = config.resolve(cmdp)
    gamma, lam = cmdp.gamma, config.lambda_gae
    policy = _initial_policy(cmdp, config)
    out = TrainLog(initial_policy=policy)
    v = np.zeros(cmdp.n_states)
    vc = np.zeros(cmdp.n_states)
    nu = float(config.nu_init)
    exact = config.exact_logging and cmdp.n_states * cmdp.n_actions <= EXACT_LIMIT
    for k in range(config.iterations):
        seed_k = int(_stream(config.seed, k, "sample").integers(2**63))
        batch = sample_trajectories(cmdp, policy, config.horizon_T, config.episodes_M, seed_k)
        gae = compute_gae(batch, v, vc, gamma, lam)
        v, vc = fit_critics(batch, gae, v, vc)
        gae = compute_gae(batch, v, vc, gamma, lam)
        jc_hat = float(batch.episode_cost_returns.mean())
        if baseline:
            half, fallback, nu = _baseline_step(cmdp, policy, batch, gae, jc_hat, nu, config, k)
            new = half
        else:
            step = improvement_step(cmdp, policy, batch, gae, config, k)
            half, fallback = step.policy, step.fallback
            new, nu = projection_step(cmdp, policy, half, batch, gae, jc_hat, nu, config, k)
        t2 = (None, None, None)
        chi = float("nan")
        j_ex = jc_ex = float("nan")
        if exact:
            j_ex = objective_j(cmdp, new, "reward")
            jc_ex = objective_j(cmdp, new, "cost")
            try:
                res = theorem2_update_bounds(cmdp, policy, half, new, config.alpha, config.beta, lam)
                chi = res.chi_k
                t2 = (res.improvement_pass, res.cost_pass, res.denom_flag)
            except DegenerateDenominator:
                log.warning("iteration %d: degenerate denominator in update bounds", k)
        out.rows.append(TrainRow(
            iteration=k,
            J_hat=float(batch.episode_returns.mean()),
            Jc_hat=jc_hat,
            J_exact=j_ex,
            Jc_exact=jc_ex,
            nu=nu,
            empirical_kl_step1=empirical_kl(policy, half, batch),
            empirical_kl_step2=empirical_kl(half, new, batch),
            chi_k=chi,
            t2_improvement_pass=t2[0],
            t2_cost_pass=t2[1],
            denom_flag=t2[2],
            fallback=fallback,
        ))
        policy = new
        out.last_batch = batch
    out.final_policy = policy
    return out


def _baseline_step(cmdp, policy, batch, gae, jc_hat, nu, config, k):
    nu = update_nu(nu, jc_hat, cmdp.cost_limit, config)
    data = Samples.from_batch(batch, gae.adv - nu * gae.adv_cost, policy)
    anchor = softmax(policy.logits)
    obj = lambda th, d: improvement_objective(th, d, anchor, config.alpha)
    with np.errstate(all="ignore"):
        theta = _sgd(policy.logits, data, obj, +1.0, config, _stream(config.seed, k, "baseline"))
        ok = np.all(np.isfinite(theta)) and np.isfinite(obj(theta, data)[0])
    if not ok:
        log.warning("iteration %d: non-finite baseline objective, keeping policy", k)
        return policy, True, nu
    return SoftmaxPolicy(theta), False, nu


def train_cup(cmdp: Cmdp, config: CupConfig) -> TrainLog:
    """Run ``config.iterations`` CUP iterations: sample, fit critics, GAE, improve, project."""
    return _run(cmdp, config, baseline=False)


def train_lagrangian_baseline(cmdp: Cmdp, config: CupConfig) -> TrainLog:
    """Single-step primal-dual update on ``A - nu A^C`` with the same dual rule and log schema."""
    return _run(cmdp, config, baseline=True)
