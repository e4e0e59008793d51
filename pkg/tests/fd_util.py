"""Finite-difference gradient oracle shared by the agent and acceptance tests."""

import numpy as np

from uansim.agent import PARAM_NAMES, td_loss_and_grads


def loss_only(params, batch, targets) -> float:
    loss, _ = td_loss_and_grads(params, batch, targets)
    return loss


def finite_difference_grads(params, batch, targets, h=1e-5) -> list:
    """Central differences of the TD loss, one parameter element at a time."""
    grads = []
    for name in PARAM_NAMES:
        arr = getattr(params, name)
        grad = np.zeros_like(arr)
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            original = arr[idx]
            arr[idx] = original + h
            up = loss_only(params, batch, targets)
            arr[idx] = original - h
            down = loss_only(params, batch, targets)
            arr[idx] = original
            grad[idx] = (up - down) / (2.0 * h)
        grads.append(grad)
    return grads


def max_relative_error(analytic: list, numeric: list) -> float:
    worst = 0.0
    for ga, gn in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(ga), np.abs(gn)), 1.0)
        worst = max(worst, float(np.max(np.abs(ga - gn) / denom)))
    return worst


def random_batch(rng, params, n_agents: int, batch_size: int, terminal_frac=0.25):
    """Synthetic transitions shaped for the given network."""
    from uansim.agent import Transition

    obs_dim, hidden, n_actions = params.obs_dim, params.hidden_size, params.n_actions
    batch = []
    for _ in range(batch_size):
        batch.append(
            Transition(
                obs=rng.normal(size=(n_agents, obs_dim)),
                actions=rng.integers(0, n_actions, size=n_agents),
                reward=float(rng.normal()),
                next_obs=rng.normal(size=(n_agents, obs_dim)),
                done=bool(rng.random() < terminal_frac),
                hidden=rng.normal(size=(n_agents, hidden)),
                next_hidden=rng.normal(size=(n_agents, hidden)),
            )
        )
    return batch
