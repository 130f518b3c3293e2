import numpy as np
import pytest

from cuplab.cmdp import SoftmaxPolicy, build_gridworld, build_random_cmdp, build_two_state

# filled by test_acceptance; echoed once at the end of the session
CRITERIA_LINES = []


@pytest.fixture
def two_state():
    return build_two_state(0.9, 0.5)


@pytest.fixture
def grid():
    return build_gridworld(4, 4, {(1, 1), (2, 2)}, (3, 3), 0.99, 5.0)


def random_instance(seed, max_states=6, max_actions=3):
    rng = np.random.default_rng(seed)
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    cmdp = build_random_cmdp(S, A, int(rng.integers(2**31)))
    return cmdp, rng


def random_policy(rng, cmdp, scale=1.0):
    return SoftmaxPolicy(scale * rng.normal(size=(cmdp.n_states, cmdp.n_actions)))


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES):
            terminalreporter.write_line(line)


def gradient_probe(seed, step=1e-5):
    """Max relative error between analytic and central-difference gradients
    of both surrogate losses at one random ``(theta, batch)`` probe."""
    from cuplab.cmdp import softmax
    from cuplab.trainer import Samples, improvement_objective, projection_objective

    rng = np.random.default_rng(seed)
    S, A, n = int(rng.integers(2, 5)), int(rng.integers(2, 4)), 40
    data = Samples(
        states=rng.integers(0, S, n),
        actions=rng.integers(0, A, n),
        adv=rng.normal(size=n),
        behaviour=rng.uniform(0.2, 0.9, n),
        shape=(S, A),
    )
    anchor = softmax(rng.normal(size=(S, A)))
    theta = rng.normal(size=(S, A))
    alpha, weight = float(rng.uniform(0.05, 1.0)), float(rng.uniform(0.1, 5.0))
    worst = 0.0
    for fn in (lambda th: improvement_objective(th, data, anchor, alpha),
               lambda th: projection_objective(th, data, anchor, weight)):
        _, grad = fn(theta)
        for idx in np.ndindex(S, A):
            if abs(grad[idx]) <= 1e-8:
                continue
            up, down = theta.copy(), theta.copy()
            up[idx] += step
            down[idx] -= step
            fd = (fn(up)[0] - fn(down)[0]) / (2 * step)
            worst = max(worst, abs(grad[idx] - fd) / max(abs(grad[idx]), abs(fd)))
    return worst
