"""Adaptive large neighborhood search over complete episode plans.

Candidates are produced by destroy/repair moves on per-vehicle node
lists, then priced by replaying the whole plan through the simulator;
the route-level scans only decide where insertions can go. Acceptance
is record-to-record: a candidate passes while it stays within a
shrinking tolerance band above the best cost seen so far. The cost
being minimized is the negated episode reward, so unserved requests
pay their forfeited completion bonus.
"""

import csv
from dataclasses import dataclass

import numpy as np

from .environment import Env, ReplayError, replay
from .greedy import greedy_solve
from .routes import (RouteCtx, _clean_chargers, plan_from_solution,
                     prune_chargers, remove_requests, served_requests)


@dataclass
class AlnsConfig:
    iterations: int = 5000
    seed: int = 0
    segment_length: int = 100
    removal_low: float = 0.1
    removal_high: float = 0.3
    sigma1: float = 10.0
    sigma2: float = 5.0
    sigma3: float = 1.0
    weight_decay: float = 0.2
    w_min: float = 0.1
    rtr_init_frac: float = 0.05
    rtr_decay: float = 0.99
    shaw_alpha: float = 0.5
    shaw_beta: float = 0.5
    shaw_rank_pow: float = 6.0
    telemetry_path: str | None = None


class OperatorWeights:
    """Roulette weights with per-segment score accounting."""

    def __init__(self, names):
        self.names = list(names)
        self.values = {n: 1.0 for n in self.names}
        self.scores = {n: 0.0 for n in self.names}
        self.uses = {n: 0 for n in self.names}

    def pick(self, rng):
        total = sum(self.values[n] for n in self.names)
        x = rng.random() * total
        acc = 0.0
        for n in self.names:
            acc += self.values[n]
            if x < acc:
                return n
        return self.names[-1]

    def credit(self, name, score):
        self.scores[name] += score
        self.uses[name] += 1

    def update(self, cfg):
        for n in self.names:
            u = self.uses[n]
            if u > 0:
                blended = ((1.0 - cfg.weight_decay) * self.values[n]
                           + cfg.weight_decay * self.scores[n] / u)
                self.values[n] = max(cfg.w_min, blended)
            self.scores[n] = 0.0
            self.uses[n] = 0


def update_weights(weights, cfg):
    weights.update(cfg)
    return weights


def rtr_tolerance(initial_cost, iteration, cfg=None):
    """Acceptance band after the given number of completed iterations."""
    frac = cfg.rtr_init_frac if cfg is not None else 0.05
    decay = cfg.rtr_decay if cfg is not None else 0.99
    return frac * abs(initial_cost) * decay ** iteration


def rtr_accept(candidate_cost, best_cost, tolerance):
    return candidate_cost <= best_cost + tolerance


# -- destroy operators --------------------------------------------------------

def random_removal(rng, served, q):
    idx = rng.choice(len(served), size=q, replace=False)
    return sorted(served[i] for i in idx)


def shaw_removal(rng, served, q, rel, rank_pow):
    pool = list(served)
    seed = pool.pop(int(rng.integers(len(pool))))
    removed = [seed]
    while pool and len(removed) < q:
        scored = sorted(pool, key=lambda r: min(rel[r][s] for s in removed))
        k = int(rng.random() ** rank_pow * len(scored))
        pick = scored[min(k, len(scored) - 1)]
        pool.remove(pick)
        removed.append(pick)
    return sorted(removed)


def worst_removal(plan, ctx, q):
    plan = [list(r) for r in plan]
    removed = []
    for _ in range(q):
        best_r, best_saving = None, None
        for ridx, route in enumerate(plan):
            info = ctx.simulate(route)
            if info is None:
                continue
            for node in route:
                if not (1 <= node <= ctx.n):
                    continue
                r = node - 1
                trial = _clean_chargers(
                    [nd for nd in route if nd != 1 + r and nd != 1 + ctx.n + r],
                    ctx)
                tcost = ctx.route_cost(trial)
                saving = info.cost - tcost if tcost != float("inf") else 0.0
                if best_saving is None or saving > best_saving:
                    best_r, best_saving = (r, ridx), saving
        if best_r is None:
            break
        r, ridx = best_r
        plan[ridx] = _clean_chargers(
            [nd for nd in plan[ridx] if nd != 1 + r and nd != 1 + ctx.n + r],
            ctx)
        removed.append(r)
    return sorted(removed)


def shaw_relatedness(inst, alpha, beta):
    n = inst.n
    t = inst.edges.time
    tmax = float(t.max())
    horizon = inst.horizon
    a = np.array([nd.a for nd in inst.nodes])
    rel = np.zeros((n, n))
    for r in range(n):
        for s in range(n):
            pr, dr = 1 + r, 1 + n + r
            ps, ds = 1 + s, 1 + n + s
            rel[r][s] = (alpha * (t[pr][ps] + t[dr][ds]) / tmax
                         + beta * (abs(a[pr] - a[ps]) + abs(a[dr] - a[ds])) / horizon)
    return rel.tolist()


# -- repair operators ----------------------------------------------------------

def _candidates(ctx, plan, infos, req):
    """All feasible insertions of a request across the plan, one empty
    route at most (they are interchangeable)."""
    out = []
    saw_empty = False
    for ridx, route in enumerate(plan):
        if not route:
            if saw_empty:
                continue
            saw_empty = True
        for delta, i, j in ctx.scan_insertions(route, infos[ridx], req):
            out.append((delta, ridx, i, j))
    return out


def _apply(ctx, plan, infos, req, ridx, i, j):
    route = ctx.insert(plan[ridx], req, i, j)
    info = ctx.simulate(route)
    if info is None:
        raise RuntimeError("insertion scan produced an infeasible candidate")
    plan[ridx] = route
    infos[ridx] = info


def random_insert(rng, ctx, plan, infos, pool):
    """Insert each pooled request at a uniformly chosen feasible spot."""
    order = [pool[i] for i in rng.permutation(len(pool))]
    for req in order:
        cands = _candidates(ctx, plan, infos, req)
        if not cands:
            continue
        delta, ridx, i, j = cands[int(rng.integers(len(cands)))]
        _apply(ctx, plan, infos, req, ridx, i, j)


def regret_insert(ctx, plan, infos, pool, k):
    """Highest regret first: the request whose best spot is most
    irreplaceable goes in now. Fewer than k feasible positions counts
    as infinite regret; ties fall to the lowest request id."""
    pending = sorted(pool)
    cands = {r: _candidates(ctx, plan, infos, r) for r in pending}
    while pending:
        best_req, best_key, best_top = None, None, None
        for req in pending:
            cl = cands[req]
            if not cl:
                continue
            ordered = sorted(cl)[:k]
            if len(ordered) < k:
                regret = float("inf")
            else:
                regret = sum(c[0] - ordered[0][0] for c in ordered[1:])
            key = (regret, -req)
            if best_key is None or key > best_key:
                best_req, best_key, best_top = req, key, ordered[0]
        if best_req is None:
            break
        delta, ridx, i, j = best_top
        was_empty = not plan[ridx]
        _apply(ctx, plan, infos, best_req, ridx, i, j)
        pending.remove(best_req)
        if was_empty:
            # a fresh empty route may have become available to the others
            cands = {r: _candidates(ctx, plan, infos, r) for r in pending}
        else:
            for req in pending:
                kept = [c for c in cands[req] if c[1] != ridx]
                kept.extend((d, ridx, i2, j2) for d, i2, j2 in
                            ctx.scan_insertions(plan[ridx], infos[ridx], req))
                cands[req] = kept


# -- main loop -----------------------------------------------------------------

@dataclass
class AlnsStats:
    iterations: int = 0
    accepted: int = 0
    new_best: int = 0
    replay_failures: int = 0
    history: list = None   # (iteration, bestJ, currentJ, tolerance, d_op, r_op)

    def __post_init__(self):
        if self.history is None:
            self.history = []


def _plan_solution(env, plan):
    return replay(env, [list(r) for r in plan])


def alns_solve(inst, config=None, return_stats=False):
    """Improve the greedy plan by adaptive destroy/repair.

    With zero iterations this returns the greedy solution unchanged.
    The best-cost trajectory is non-increasing by construction.
    """
    cfg = config or AlnsConfig()
    rng = np.random.default_rng(cfg.seed)
    env = Env(inst)
    ctx = RouteCtx(env)
    n = inst.n

    init = greedy_solve(inst)
    plan = plan_from_solution(init, inst.fleet.vehicles)
    cur_sol = _plan_solution(env, plan)
    cur_j = -cur_sol.reward
    best_plan, best_sol, best_j = [list(r) for r in plan], cur_sol, cur_j

    dweights = OperatorWeights(["random_removal", "shaw_removal", "worst_removal"])
    rweights = OperatorWeights(["random_insert", "regret_2", "regret_3"])
    rel = shaw_relatedness(inst, cfg.shaw_alpha, cfg.shaw_beta) if n else None
    tol0 = cfg.rtr_init_frac * abs(cur_j)
    stats = AlnsStats()

    for it in range(cfg.iterations):
        tol = tol0 * cfg.rtr_decay ** it
        d_op = dweights.pick(rng)
        r_op = rweights.pick(rng)

        cand_plan = [list(r) for r in plan]
        served = served_requests(cand_plan, n)
        if served:
            frac = rng.uniform(cfg.removal_low, cfg.removal_high)
            q = max(1, min(len(served), round(frac * n)))
            if d_op == "random_removal":
                ids = random_removal(rng, served, q)
            elif d_op == "shaw_removal":
                ids = shaw_removal(rng, served, q, rel, cfg.shaw_rank_pow)
            else:
                ids = worst_removal(cand_plan, ctx, q)
            cand_plan, _ = remove_requests(cand_plan, ctx, ids)
            changed = sorted(i for i in range(len(plan))
                             if cand_plan[i] != plan[i])
            pruned = prune_chargers([cand_plan[i] for i in changed], ctx)
            for slot, i in enumerate(changed):
                cand_plan[i] = pruned[slot]
        # everything not on a route right now is up for insertion
        pool = sorted(set(range(n)) - set(served_requests(cand_plan, n)))

        cand_infos = [ctx.simulate(r) for r in cand_plan]
        if r_op == "random_insert":
            random_insert(rng, ctx, cand_plan, cand_infos, pool)
        else:
            regret_insert(ctx, cand_plan, cand_infos, pool, 2 if r_op == "regret_2" else 3)

        try:
            cand_sol = _plan_solution(env, cand_plan)
        except ReplayError:
            stats.replay_failures += 1
            dweights.credit(d_op, 0.0)
            rweights.credit(r_op, 0.0)
            continue
        cand_j = -cand_sol.reward

        score = 0.0
        if cand_j < best_j:
            score = cfg.sigma1
        accepted = rtr_accept(cand_j, best_j, tol)
        if accepted and score == 0.0:
            score = cfg.sigma2 if cand_j < cur_j else cfg.sigma3
        dweights.credit(d_op, score)
        rweights.credit(r_op, score)

        if cand_j < best_j:
            best_plan = [list(r) for r in cand_plan]
            best_sol, best_j = cand_sol, cand_j
            stats.new_best += 1
        if accepted:
            plan, cur_sol, cur_j = cand_plan, cand_sol, cand_j
            stats.accepted += 1

        stats.history.append((it, best_j, cur_j, tol, d_op, r_op))
        stats.iterations = it + 1
        if (it + 1) % cfg.segment_length == 0:
            dweights.update(cfg)
            rweights.update(cfg)

    if cfg.telemetry_path:
        with open(cfg.telemetry_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["iteration", "best_cost", "current_cost", "tolerance",
                         "destroy_op", "repair_op"])
            wr.writerows(stats.history)

    if return_stats:
        return best_sol, stats
    return best_sol
