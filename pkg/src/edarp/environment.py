"""Episode simulator for the electric dial-a-ride problem.

One vehicle is active at a time. It starts at the depot with a full
battery, serves pickup/delivery stops, may stop at charging stations,
and ends its route back at the depot; if requests remain and the fleet
allows, a fresh vehicle is swapped in (clock 0, full battery), otherwise
the episode terminates. Costs accumulate as energy in kWh, waiting
seconds at pickups, and lateness seconds at deliveries.

Feasible next nodes come from six constraint groups: visit/precedence
state, capacity, hard time windows (pickups and chargers; deliveries are
soft-late but hard on ride time), battery reserve with an escape-energy
margin, structural charger/depot rules, and fleet accounting handled by
the depot transition itself. Masks are computed from the deterministic
matrices; when traversal noise is enabled the realized costs may exceed
the estimates the mask saw, which is the intended reactive behavior.
"""

import json
from dataclasses import dataclass

import numpy as np

from .instance import KIND_CHARGER, KIND_DELIVERY, KIND_DEPOT, KIND_PICKUP

SCHEMA_SOLUTION = "edarp-solution/1"


class MaskViolation(RuntimeError):
    """An action was taken that the feasibility mask forbids."""

    def __init__(self, step, node, message=""):
        super().__init__(message or f"step {step}: node {node} not in feasibility mask")
        self.step = step
        self.node = node


class ReplayError(MaskViolation):
    """A stored route could not be replayed through the simulator."""


def charging_power(soc):
    """Charging power in kW as a function of state of charge.

    100 kW below 0.45, tapering linearly to 30 kW at 0.95, 30 kW above;
    continuous at both breakpoints.
    """
    if soc < 0.0 or soc > 1.0:
        raise ValueError(f"state of charge {soc} outside [0, 1]")
    if soc < 0.45:
        return 100.0
    if soc <= 0.95:
        return 100.0 - 140.0 * (soc - 0.45)
    return 30.0


def sample_noise(base, scale, z):
    """Inflate a nonnegative base cost by |z| * scale (half-normal model)."""
    return base * (1.0 + abs(z) * scale)


@dataclass
class NoiseConfig:
    enabled: bool = False
    scale: float = 0.1
    rng: object = None

    @staticmethod
    def make(scale, seed):
        """Noise at the given scale; scale 0 means deterministic."""
        return NoiseConfig(scale > 0.0, scale, np.random.default_rng(seed))


class EpisodeState:
    """Mutable rollout state; clone() is cheap enough for tree search."""

    __slots__ = ("node", "clock", "soc", "load", "onboard", "vehicles_used",
                 "visited", "served_pickup", "served_delivery", "n_served",
                 "routes", "energy_kwh", "wait_sec", "late_sec", "travel_sec",
                 "charge_visits", "terminal", "steps")

    def __init__(self):
        self.node = 0
        self.clock = 0.0
        self.soc = 1.0
        self.load = 0
        self.onboard = {}            # request id -> pickup service start
        self.vehicles_used = 1
        self.visited = 0             # bitset over nodes (depot exempt)
        self.served_pickup = 0       # bitsets over requests
        self.served_delivery = 0
        self.n_served = 0
        self.routes = [[(0, 0.0, 0.0, 1.0, 0.0)]]
        self.energy_kwh = 0.0
        self.wait_sec = 0.0
        self.late_sec = 0.0
        self.travel_sec = 0.0
        self.charge_visits = 0
        self.terminal = False
        self.steps = 0

    def clone(self):
        c = EpisodeState.__new__(EpisodeState)
        c.node = self.node
        c.clock = self.clock
        c.soc = self.soc
        c.load = self.load
        c.onboard = dict(self.onboard)
        c.vehicles_used = self.vehicles_used
        c.visited = self.visited
        c.served_pickup = self.served_pickup
        c.served_delivery = self.served_delivery
        c.n_served = self.n_served
        c.routes = [list(r) for r in self.routes]
        c.energy_kwh = self.energy_kwh
        c.wait_sec = self.wait_sec
        c.late_sec = self.late_sec
        c.travel_sec = self.travel_sec
        c.charge_visits = self.charge_visits
        c.terminal = self.terminal
        c.steps = self.steps
        return c


@dataclass
class StepOutcome:
    state: EpisodeState
    energy: float
    wait: float
    late: float
    charge_delta: float
    vehicle_reset: bool
    terminal: bool


class Solution:
    """Ordered per-vehicle stop logs with the cost breakdown and metrics."""

    def __init__(self, routes, n_served, j_energy, j_wait, j_late, j_travel,
                 charge_visits, objective, reward, metrics, instance_seed=0):
        self.routes = routes                # list per vehicle of (node, arrival, serviceStart, soc, chargeDelta)
        self.n_served = n_served
        self.j_energy = j_energy
        self.j_wait = j_wait                # seconds
        self.j_late = j_late                # seconds
        self.j_travel = j_travel            # seconds
        self.charge_visits = charge_visits
        self.objective = objective
        self.reward = reward
        self.metrics = metrics
        self.instance_seed = instance_seed

    def vehicle_routes(self):
        """Per-vehicle visit lists without the depot bookends."""
        return [[stop[0] for stop in log[1:] if stop[0] != 0] for log in self.routes]


# kind codes used in the hot loops
_DEPOT, _PICKUP, _DELIVERY, _CHARGER = 0, 1, 2, 3
_KIND_CODE = {KIND_DEPOT: _DEPOT, KIND_PICKUP: _PICKUP,
              KIND_DELIVERY: _DELIVERY, KIND_CHARGER: _CHARGER}


class Env:
    """Simulator bound to one instance; holds no episode state itself."""

    def __init__(self, inst):
        self.inst = inst
        self.n = inst.n
        self.num_nodes = inst.num_nodes
        self.t = inst.edges.time.tolist()
        self.e = inst.edges.energy.tolist()
        self.a = [nd.a for nd in inst.nodes]
        self.l = [nd.l for nd in inst.nodes]
        self.sigma = [nd.sigma for nd in inst.nodes]
        self.q = [nd.q for nd in inst.nodes]
        self.kindc = [_KIND_CODE[nd.kind] for nd in inst.nodes]
        self.max_ride = [r.max_ride for r in inst.requests]
        self.first_charger = 1 + 2 * inst.n
        self.chargers = list(range(self.first_charger, self.num_nodes))
        self.K = inst.fleet.vehicles
        self.Q = inst.fleet.capacity
        self.B = inst.fleet.battery_kwh
        self.invB = 1.0 / self.B
        self.rho = inst.fleet.soc_reserve
        # cheapest escape energy from each node to the depot or any charger
        self.escape = [min(self.e[j][k] for k in [0] + self.chargers)
                       for j in range(self.num_nodes)]
        self.step_limit = 4 * (self.num_nodes + 2) * self.K

    def reset(self):
        return EpisodeState()

    def mask(self, state):
        """Boolean feasibility over nodes; guaranteed nonempty when non-terminal."""
        v_count = self.num_nodes
        allowed = [False] * v_count
        if state.terminal:
            return allowed
        v = state.node
        b = state.soc
        load = state.load
        tau = state.clock
        t_v = self.t[v]
        e_v = self.e[v]
        invB = self.invB
        rho = self.rho
        at_depot = v == 0
        from_charger = self.kindc[v] == _CHARGER
        any_ok = False

        if load == 0 and b - e_v[0] * invB >= rho:
            allowed[0] = True
            any_ok = True
        visited = state.visited
        for j in range(1, v_count):
            if (visited >> j) & 1:
                continue
            kind = self.kindc[j]
            if kind == _CHARGER and (at_depot or from_charger or load > 0):
                continue
            qj = self.q[j]
            nl = load + qj
            if nl < 0 or nl > self.Q:
                continue
            arrival = tau + t_v[j]
            if kind == _DELIVERY:
                r = j - 1 - self.n
                picked = state.onboard.get(r)
                if picked is None:
                    continue
                ss = arrival if arrival > self.a[j] else self.a[j]
                if ss - picked > self.max_ride[r]:
                    continue
            else:
                # hard upper window for pickups and chargers
                aj = self.a[j]
                ss = arrival if arrival > aj else aj
                if ss > self.l[j]:
                    continue
            after = b - e_v[j] * invB
            if after < rho or after - self.escape[j] * invB < rho:
                continue
            allowed[j] = True
            any_ok = True

        if not any_ok:
            allowed[self._escape_action(state)] = True
        return allowed

    def mask_array(self, state):
        return np.array(self.mask(state), dtype=bool)

    def _escape_action(self, state):
        """Last-resort move when every regular rule blocks: run for the
        cheapest battery-reachable depot/charger, depot preferred. The
        reserve margin in the battery rule guarantees one exists."""
        v = state.node
        e_v = self.e[v]
        if state.soc - e_v[0] * self.invB >= self.rho:
            return 0
        best, best_e = 0, float("inf")
        for c in self.chargers:
            if c != v and e_v[c] < best_e:
                best, best_e = c, e_v[c]
        return best

    def step(self, state, action, noise=None, mask=None):
        """Advance the episode; mutates state and returns the outcome."""
        if state.terminal:
            raise RuntimeError("step() called on a terminal episode")
        if mask is None:
            mask = self.mask(state)
        if not mask[action]:
            raise MaskViolation(state.steps, action)
        state.steps += 1
        if state.steps > self.step_limit:
            raise RuntimeError("episode exceeded the step limit; broken instance?")
        v, j = state.node, action
        dt = self.t[v][j]
        de = self.e[v][j]
        if noise is not None and noise.enabled and noise.scale > 0.0:
            z = float(noise.rng.standard_normal())
            dt = sample_noise(dt, noise.scale, z)
            de = sample_noise(de, noise.scale, z)
        arrival = state.clock + dt
        aj = self.a[j]
        sig = self.sigma[j]
        service_start = arrival if arrival > aj else aj
        soc_travel = state.soc - de * self.invB
        kind = self.kindc[j]
        charge = 0.0
        if kind == _CHARGER:
            at = min(max(soc_travel, 0.0), 1.0)
            charge = charging_power(at) * sig / 3600.0 * self.invB
            room = 1.0 - soc_travel
            if charge > room:
                charge = room
            state.charge_visits += 1
        soc_new = soc_travel + charge
        wait = 0.0
        late = 0.0
        if kind == _PICKUP:
            if arrival < aj:
                wait = aj - arrival
                state.wait_sec += wait
            r = j - 1
            state.served_pickup |= 1 << r
            state.onboard[r] = service_start
        elif kind == _DELIVERY:
            lj = self.l[j]
            if service_start > lj:
                late = service_start - lj
                state.late_sec += late
            r = j - 1 - self.n
            state.served_delivery |= 1 << r
            state.onboard.pop(r, None)
            state.n_served += 1
        state.energy_kwh += de
        state.travel_sec += dt
        state.load += self.q[j]
        state.clock = service_start + sig
        state.soc = soc_new
        if j != 0:
            state.visited |= 1 << j
        state.routes[-1].append((j, arrival, service_start, soc_new, charge))
        vehicle_reset = False
        terminal = False
        if j == 0:
            state.node = 0
            if state.n_served < self.n and state.vehicles_used < self.K:
                vehicle_reset = True
                state.vehicles_used += 1
                state.clock = 0.0
                state.soc = 1.0
                state.load = 0
                state.onboard.clear()
                state.routes.append([(0, 0.0, 0.0, 1.0, 0.0)])
            else:
                terminal = True
                state.terminal = True
        else:
            state.node = j
        return StepOutcome(state, de, wait, late, charge, vehicle_reset, terminal)

    def solution(self, state):
        """Score a terminal state into a Solution."""
        if not state.terminal:
            raise ValueError("episode still running")
        w = self.inst.weights
        tu = w.time_unit
        j_val = (w.energy * state.energy_kwh
                 + w.wait * (state.wait_sec / tu)
                 + w.late * (state.late_sec / tu)
                 + w.travel * (state.travel_sec / tu))
        reward = -j_val + w.complete * state.n_served
        metrics = self._metrics(state, j_val, reward)
        return Solution([list(r) for r in state.routes], state.n_served,
                        state.energy_kwh, state.wait_sec, state.late_sec,
                        state.travel_sec, state.charge_visits, j_val, reward,
                        metrics, instance_seed=self.inst.seed)

    def _metrics(self, state, j_val, reward):
        vehicles = 0
        seg_loads = []
        for log in state.routes:
            moved = any(stop[0] != 0 for stop in log)
            if moved:
                vehicles += 1
            load = 0
            for k in range(len(log) - 1):
                load += self.q[log[k][0]]
                if load >= 1:
                    seg_loads.append(load)
        picked = bin(state.served_pickup).count("1")
        delivered = state.n_served
        return {
            "completion_pct": 100.0 * delivered / self.n if self.n else 100.0,
            "vehicles": vehicles,
            "load_factor": float(np.mean(seg_loads)) if seg_loads else 0.0,
            "charge_visits": state.charge_visits,
            "energy_per_vehicle_kwh": state.energy_kwh / max(1, vehicles),
            "wait_s": state.wait_sec / max(1, picked),
            "late_s": state.late_sec / max(1, delivered),
        }


def replay(env, vehicle_routes, noise=None):
    """Drive per-vehicle visit lists through the simulator.

    Each route is a node list without depot bookends; a depot return is
    appended after each. Unused fleet slots are burned with extra depot
    visits until the episode terminates, so partial plans score cleanly.
    Raises ReplayError when any action is off-mask.
    """
    if not isinstance(env, Env):
        env = Env(env)
    if len(vehicle_routes) > env.K:
        raise ReplayError(0, 0, f"{len(vehicle_routes)} routes for {env.K} vehicles")
    routes = list(vehicle_routes)
    while routes and not routes[-1]:
        routes.pop()                  # unused fleet slots; the burn loop covers them
    state = env.reset()
    seq = []
    for route in routes:
        seq.extend(route)
        seq.append(0)
    idx = 0
    for action in seq:
        if state.terminal:
            raise ReplayError(idx, action, f"actions remain after terminal at step {idx}")
        m = env.mask(state)
        if not m[action]:
            raise ReplayError(idx, action)
        env.step(state, action, noise=noise, mask=m)
        idx += 1
    while not state.terminal:
        env.step(state, 0)
    return env.solution(state)


def score_solution(sol, inst):
    """Replay a Solution's routes and return (objective, reward, metrics).

    The replay recomputes every timestamp and cost from scratch, so a
    tampered or stale solution is rejected with the offending step.
    """
    env = inst if isinstance(inst, Env) else Env(inst)
    fresh = replay(env, sol.vehicle_routes())
    return fresh.objective, fresh.reward, fresh.metrics


def save_solution(sol):
    doc = {
        "schema": SCHEMA_SOLUTION,
        "instanceSeedOrHash": sol.instance_seed,
        "routes": [[{"node": s[0], "arrival": s[1], "serviceStart": s[2],
                     "soc": s[3], "chargeDelta": s[4]} for s in log]
                   for log in sol.routes],
        "served": sol.n_served,
        "cost": {"energy": sol.j_energy, "wait": sol.j_wait, "late": sol.j_late,
                 "travel": sol.j_travel, "objective": sol.objective,
                 "reward": sol.reward},
        "metrics": sol.metrics,
    }
    return (json.dumps(doc, indent=1) + "\n").encode()


def load_solution(data):
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise ValueError(f"malformed solution JSON at byte {e.pos}: {e.msg}") from e
    if doc.get("schema") != SCHEMA_SOLUTION:
        raise ValueError(f"unsupported schema {doc.get('schema')!r}")
    routes = [[(s["node"], s["arrival"], s["serviceStart"], s["soc"], s["chargeDelta"])
               for s in log] for log in doc["routes"]]
    cost = doc["cost"]
    return Solution(routes, doc["served"], cost["energy"], cost["wait"],
                    cost["late"], cost.get("travel", 0.0), doc["metrics"].get("charge_visits", 0),
                    cost["objective"], cost["reward"], doc["metrics"],
                    instance_seed=doc.get("instanceSeedOrHash", 0))
