"""Tabular constrained MDPs, built-in environments and the softmax policy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

ROW_TOL = 1e-12

# gridworld action order: N, E, S, W as (drow, dcol)
MOVES = ((-1, 0), (0, 1), (1, 0), (0, -1))
SLIP = 0.1


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Cmdp:
    """A single-constraint CMDP.

    ``reward`` is indexed ``[s, a, s']`` (reward observed on the transition),
    ``cost`` is indexed ``[s, a]``.
    """

    transition: np.ndarray
    reward: np.ndarray
    cost: np.ndarray
    rho0: np.ndarray
    gamma: float
    cost_limit: float

    def __post_init__(self):
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "reward", _frozen(self.reward))
        object.__setattr__(self, "cost", _frozen(self.cost))
        object.__setattr__(self, "rho0", _frozen(self.rho0))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "cost_limit", float(self.cost_limit))
        if self.transition.ndim != 3:
            raise ValueError("transition must have shape (S, A, S)")
        S, A, S2 = self.transition.shape
        if S != S2:
            raise ValueError("transition must have shape (S, A, S)")
        if self.reward.shape != (S, A, S):
            raise ValueError(f"reward shape {self.reward.shape} != {(S, A, S)}")
        if self.cost.shape != (S, A):
            raise ValueError(f"cost shape {self.cost.shape} != {(S, A)}")
        if self.rho0.shape != (S,):
            raise ValueError(f"rho0 shape {self.rho0.shape} != {(S,)}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def replace(self, **changes) -> "Cmdp":
        fields = dict(transition=self.transition, reward=self.reward, cost=self.cost,
                      rho0=self.rho0, gamma=self.gamma, cost_limit=self.cost_limit)
        fields.update(changes)
        return Cmdp(**fields)


def validate_cmdp(cmdp: Cmdp) -> list[str]:
    """Return a list of violated invariants; an empty list means valid."""
    problems = []
    P = cmdp.transition
    if not np.all(np.isfinite(P)):
        problems.append("non-finite transition entries")
    for s, a in sorted({(s, a) for s, a, _ in np.argwhere(P < 0)}):
        problems.append(f"negative transition probability at (s{s},a{a})")
    sums = P.sum(axis=2)
    for s in range(cmdp.n_states):
        for a in range(cmdp.n_actions):
            if abs(sums[s, a] - 1.0) > ROW_TOL:
                problems.append(f"row sum {sums[s, a]:.12g} at (s{s},a{a})")
    if not np.all(np.isfinite(cmdp.reward)):
        problems.append("non-finite reward entries")
    if not np.all(np.isfinite(cmdp.cost)):
        problems.append("non-finite cost entries")
    for s in np.nonzero(cmdp.rho0 < 0)[0]:
        problems.append(f"negative initial probability at s{s}")
    if abs(cmdp.rho0.sum() - 1.0) > ROW_TOL:
        problems.append(f"rho0 sums to {cmdp.rho0.sum():.12g}")
    if not 0.0 < cmdp.gamma < 1.0:
        problems.append("gamma out of (0,1)")
    if not cmdp.cost_limit >= 0.0:
        problems.append("cost_limit negative")
    return problems


def _check_gamma_b(gamma, b):
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    if not b >= 0.0:
        raise ValueError(f"cost limit b must be >= 0, got {b}")


def build_two_state(gamma: float, b: float) -> Cmdp:
    """Two states {s0, s1}, actions {stay, flip}; reward 1 on landing in s1, cost 1 per flip."""
    _check_gamma_b(gamma, b)
    P = np.zeros((2, 2, 2))
    for s in range(2):
        P[s, 0, s] = 1.0
        P[s, 1, 1 - s] = 1.0
    r = np.zeros((2, 2, 2))
    r[:, :, 1] = 1.0
    c = np.array([[0.0, 1.0], [0.0, 1.0]])
    return Cmdp(P, r, c, np.array([1.0, 0.0]), gamma, b)


def build_gridworld(width: int, height: int, hazard_cells: Iterable, goal_cell,
                    gamma: float, b: float, start_cell=(0, 0)) -> Cmdp:
    """Slippery gridworld with hazard cells and an absorbing goal.

    Cells are ``(row, col)`` and state index is ``row * width + col``.
    The intended move succeeds with probability 0.9, otherwise the agent slips
    to one of the two perpendicular moves. Moving off the grid leaves the agent
    in place. Entering the goal pays reward 1; the goal then self-loops with
    zero reward and zero cost. The per-step cost ``c(s, a)`` is the probability
    that the move lands in a hazard cell.
    """
    _check_gamma_b(gamma, b)
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be positive")
    hazards = {tuple(int(v) for v in h) for h in hazard_cells}
    goal = tuple(int(v) for v in goal_cell)
    start = tuple(int(v) for v in start_cell)

    def inside(cell):
        return 0 <= cell[0] < height and 0 <= cell[1] < width

    for cell in hazards | {goal, start}:
        if not inside(cell):
            raise ValueError(f"cell {cell} outside {height}x{width} grid")
    if goal in hazards:
        raise ValueError(f"goal {goal} overlaps a hazard cell")

    S, A = width * height, 4
    index = lambda cell: cell[0] * width + cell[1]
    P = np.zeros((S, A, S))
    r = np.zeros((S, A, S))
    hazard_mask = np.zeros(S)
    for h in hazards:
        hazard_mask[index(h)] = 1.0
    g = index(goal)
    for row in range(height):
        for col in range(width):
            s = index((row, col))
            if s == g:
                P[s, :, s] = 1.0
                continue
            for a in range(A):
                outcomes = [(a, 1.0 - SLIP), ((a + 1) % 4, SLIP / 2), ((a + 3) % 4, SLIP / 2)]
                for move, prob in outcomes:
                    dr, dc = MOVES[move]
                    nxt = (row + dr, col + dc)
                    if not inside(nxt):
                        nxt = (row, col)
                    P[s, a, index(nxt)] += prob
            r[s, :, g] = 1.0
    c = P @ hazard_mask
    c[g] = 0.0
    rho0 = np.zeros(S)
    rho0[index(start)] = 1.0
    return Cmdp(P, r, c, rho0, gamma, b)


def build_random_cmdp(n_states: int, n_actions: int, seed: int,
                      gamma: float = 0.9, b: float = 5.0) -> Cmdp:
    """Random dense CMDP; every transition row is a Dirichlet(1, ..., 1) draw."""
    if n_states < 1 or n_actions < 1:
        raise ValueError("n_states and n_actions must be >= 1")
    _check_gamma_b(gamma, b)
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    # renormalise so row sums are exact to rounding
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(0.0, 1.0, size=(n_states, n_actions, n_states))
    c = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    rho0 = np.full(n_states, 1.0 / n_states)
    return Cmdp(P, r, c, rho0, gamma, b)


@dataclass(frozen=True, eq=False)
class SoftmaxPolicy:
    """Tabular policy with ``pi(a|s) = softmax(logits[s])``."""

    logits: np.ndarray

    def __post_init__(self):
        logits = _frozen(self.logits)
        if logits.ndim != 2:
            raise ValueError("logits must have shape (S, A)")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        object.__setattr__(self, "logits", logits)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "SoftmaxPolicy":
        return cls(np.zeros((n_states, n_actions)))

    @classmethod
    def from_probs(cls, probs) -> "SoftmaxPolicy":
        """Policy whose distribution equals ``probs`` (entries must be positive)."""
        probs = np.asarray(probs, dtype=float)
        if np.any(probs <= 0):
            raise ValueError("softmax policies need strictly positive probabilities")
        return cls(np.log(probs))

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape

    @property
    def probs(self) -> np.ndarray:
        return policy_distribution(self)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_distribution(policy: SoftmaxPolicy) -> np.ndarray:
    return softmax(policy.logits)


def deterministic_logits(actions, n_actions: int, margin: float = 30.0) -> np.ndarray:
    """Logits of a near-deterministic policy choosing ``actions[s]`` in state ``s``."""
    actions = np.asarray(actions, dtype=int)
    logits = np.zeros((len(actions), n_actions))
    logits[np.arange(len(actions)), actions] = margin
    return logits
