"""Exact solver for tiny instances by exhaustive depth-first search.

Every mask-feasible action sequence is enumerated with the simulator as
the transition function. The optimistic bound assumes all remaining
requests get served at zero additional cost, which is admissible because
costs only accumulate; pruning on it therefore never discards a strictly
better trajectory, and reward ties keep the lexicographically smallest
action sequence because depth-first order visits sequences in exactly
that order. Exponential in n: intended for n <= 4 and K <= 2.
"""

from .environment import Env


def _partial_objective(inst, state):
    w = inst.weights
    tu = w.time_unit
    return (w.energy * state.energy_kwh + w.wait * (state.wait_sec / tu)
            + w.late * (state.late_sec / tu) + w.travel * (state.travel_sec / tu))


def _replay_actions(env, seq):
    state = env.reset()
    for action in seq:
        env.step(state, action)
    return env.solution(state)


def _search(inst, limit, prune, track_worst):
    env = Env(inst)
    w_c = inst.weights.complete
    n = inst.n
    best = [float("-inf"), None]     # reward, action sequence
    worst = [float("inf"), None]
    counters = {"expanded": 0, "complete": 0, "exhausted": False}

    def rec(state, seq):
        counters["expanded"] += 1
        if counters["expanded"] > limit:
            counters["exhausted"] = True
            return
        mask = env.mask(state)
        for j in range(env.num_nodes):
            if not mask[j]:
                continue
            if counters["exhausted"]:
                return
            child = state.clone()
            out = env.step(child, j, mask=mask)
            seq.append(j)
            if out.terminal:
                counters["complete"] += 1
                reward = -_partial_objective(inst, child) + w_c * child.n_served
                if reward > best[0]:
                    best[0], best[1] = reward, list(seq)
                if track_worst and reward < worst[0]:
                    worst[0], worst[1] = reward, list(seq)
            else:
                go = True
                if prune:
                    bound = -_partial_objective(inst, child) + w_c * n
                    go = bound > best[0]
                if go:
                    rec(child, seq)
            seq.pop()

    rec(env.reset(), [])
    return env, best, worst, counters


def exact_solve(inst, limit=10_000_000, prune=True):
    """Max-reward solution over all feasible trajectories.

    Returns (Solution, optimal); optimal is False when the node budget
    ran out, in which case the best trajectory found so far is returned.
    """
    env, best, _, counters = _search(inst, limit, prune, track_worst=False)
    if best[1] is None:
        raise RuntimeError("search found no complete trajectory")
    sol = _replay_actions(env, best[1])
    return sol, not counters["exhausted"]


def enumerate_rewards(inst, limit=10_000_000):
    """Pruning-free enumeration of every complete trajectory.

    Returns a dict with the best and worst rewards, their action
    sequences, the trajectory count, and whether enumeration finished
    inside the budget. Serves as the independent cross-check for
    exact_solve and as the reward-range reference on tiny instances.
    """
    _, best, worst, counters = _search(inst, limit, prune=False, track_worst=True)
    return {
        "best_reward": best[0],
        "best_seq": best[1],
        "worst_reward": worst[0],
        "worst_seq": worst[1],
        "trajectories": counters["complete"],
        "complete": not counters["exhausted"],
    }
