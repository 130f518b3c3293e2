"""Trajectory sampling and the sample-side estimators: TD errors, GAE, value targets."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .cmdp import Cmdp, SoftmaxPolicy, policy_distribution


@dataclass(frozen=True, eq=False)
class TrajectoryBatch:
    """``M`` episodes of fixed horizon ``T``.

    ``states`` has ``T + 1`` columns (the last is the state reached after the
    final step). ``rewards[:, t]`` is ``r(s_{t+1}|s_t, a_t)`` and ``costs[:, t]``
    is ``c(s_t, a_t)``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    costs: np.ndarray
    gamma: float
    seed: int
    generator: str

    @property
    def n_episodes(self) -> int:
        return self.actions.shape[0]

    @property
    def horizon(self) -> int:
        return self.actions.shape[1]

    @property
    def discounts(self) -> np.ndarray:
        return self.gamma ** np.arange(self.horizon)

    @property
    def episode_returns(self) -> np.ndarray:
        return self.rewards @ self.discounts

    @property
    def episode_cost_returns(self) -> np.ndarray:
        return self.costs @ self.discounts

    def episodes(self):
        for i in range(self.n_episodes):
            yield {
                "episode": i,
                "states": self.states[i].tolist(),
                "actions": self.actions[i].tolist(),
                "rewards": self.rewards[i].tolist(),
                "costs": self.costs[i].tolist(),
                "cost_return": float(self.episode_cost_returns[i]),
            }


def _draw(cdf_rows: np.ndarray, u: np.ndarray) -> np.ndarray:
    # inverse-CDF lookup, one row per episode
    idx = (cdf_rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


def sample_trajectories(cmdp: Cmdp, policy: SoftmaxPolicy, horizon_T: int, episodes_M: int,
                        seed: int) -> TrajectoryBatch:
    """Roll out ``episodes_M`` episodes of ``horizon_T`` steps in lockstep.

    A single PCG64 stream seeded with ``seed`` drives the batch. Each step
    draws one uniform per episode for the action and one for the next state,
    always in that order, so the batch is a pure function of the seed.
    """
    if horizon_T < 1 or episodes_M < 1:
        raise ValueError("horizon_T and episodes_M must be >= 1")
    rng = np.random.default_rng(seed)
    pi_cdf = np.cumsum(policy_distribution(policy), axis=1)
    P_cdf = np.cumsum(cmdp.transition, axis=2)
    rho_cdf = np.cumsum(cmdp.rho0)

    M, T = episodes_M, horizon_T
    states = np.empty((M, T + 1), dtype=np.int64)
    actions = np.empty((M, T), dtype=np.int64)
    states[:, 0] = _draw(np.broadcast_to(rho_cdf, (M, rho_cdf.size)), rng.random(M))
    for t in range(T):
        s = states[:, t]
        a = _draw(pi_cdf[s], rng.random(M))
        actions[:, t] = a
        states[:, t + 1] = _draw(P_cdf[s, a], rng.random(M))
    s, a, s2 = states[:, :-1], actions, states[:, 1:]
    return TrajectoryBatch(
        states=states,
        actions=actions,
        rewards=cmdp.reward[s, a, s2],
        costs=cmdp.cost[s, a],
        gamma=cmdp.gamma,
        seed=int(seed),
        generator="numpy.PCG64",
    )


@dataclass(frozen=True, eq=False)
class GaeTables:
    td: np.ndarray
    td_cost: np.ndarray
    adv: np.ndarray
    adv_cost: np.ndarray
    v_target: np.ndarray
    v_target_cost: np.ndarray


def td_errors(batch: TrajectoryBatch, signal: np.ndarray, v_table: np.ndarray,
              gamma: float) -> np.ndarray:
    v = np.asarray(v_table, dtype=float)
    return signal + gamma * v[batch.states[:, 1:]] - v[batch.states[:, :-1]]


def discounted_suffix_sum(x: np.ndarray, factor: float) -> np.ndarray:
    """``out[:, t] = sum_{j >= t} factor^(j - t) x[:, j]`` by backward recursion."""
    out = np.empty_like(x, dtype=float)
    acc = np.zeros(x.shape[0])
    for t in range(x.shape[1] - 1, -1, -1):
        acc = x[:, t] + factor * acc
        out[:, t] = acc
    return out


def compute_gae(batch: TrajectoryBatch, v_table, v_cost_table, gamma: float,
                lam: float) -> GaeTables:
    """Reward and cost GAE with the series ending at the horizon (no extra bootstrap)."""
    n_states = int(batch.states.max()) + 1
    for name, table in (("v_table", v_table), ("v_cost_table", v_cost_table)):
        if np.ndim(table) != 1 or len(table) < n_states:
            raise ValueError(f"{name} does not cover every visited state")
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    td = td_errors(batch, batch.rewards, v_table, gamma)
    td_c = td_errors(batch, batch.costs, v_cost_table, gamma)
    adv = discounted_suffix_sum(td, gamma * lam)
    adv_c = discounted_suffix_sum(td_c, gamma * lam)
    s = batch.states[:, :-1]
    return GaeTables(
        td=td,
        td_cost=td_c,
        adv=adv,
        adv_cost=adv_c,
        v_target=adv + np.asarray(v_table)[s],
        v_target_cost=adv_c + np.asarray(v_cost_table)[s],
    )


def dump_batch(batch: TrajectoryBatch, path) -> None:
    """Write one JSON object per episode."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in batch.episodes():
            fh.write(json.dumps(row, separators=(",", ":")) + "\n")
