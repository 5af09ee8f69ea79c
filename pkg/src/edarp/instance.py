"""Problem instances for the electric dial-a-ride workbench.

An instance is one complete routing problem: a depot, n pickup/delivery
pairs, charging stations, dense travel-time/distance/energy matrices, a
homogeneous fleet, and the cost weights used to score solutions.

Node order is fixed: [depot, pickups 1..n, deliveries n+1..2n, chargers].
Request i is picked up at node 1+i and delivered at node 1+n+i.
Units are seconds, meters, and kWh throughout.
"""

import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_INSTANCE = "edarp-instance/1"

KIND_DEPOT = "depot"
KIND_PICKUP = "pickup"
KIND_DELIVERY = "delivery"
KIND_CHARGER = "charger"
KINDS = (KIND_DEPOT, KIND_PICKUP, KIND_DELIVERY, KIND_CHARGER)


class InstanceFormatError(ValueError):
    """Raised when serialized instance data cannot be decoded."""


@dataclass
class Node:
    id: int
    kind: str
    x: float
    y: float
    a: float        # window open, seconds
    l: float        # window close, seconds
    sigma: float    # service time, seconds
    q: int          # load change: +1 pickup, -1 delivery, 0 otherwise


@dataclass
class Request:
    id: int
    pickup: int
    delivery: int
    max_ride: float  # hard cap on delivery service start minus pickup service start


@dataclass
class FleetParams:
    vehicles: int = 2
    capacity: int = 3
    battery_kwh: float = 20.0
    soc_reserve: float = 0.1
    initial_soc: float = 1.0


@dataclass
class CostWeights:
    """Weights of the scalar objective J and the reward R.

    J = energy*J_e + wait*(J_w/time_unit) + late*(J_l/time_unit)
        [+ travel*(J_t/time_unit) when travel > 0]
    R = -J + complete * n_served

    Wait and lateness accumulate in seconds; time_unit (default 60)
    brings them to minutes so the time terms are commensurate with
    energies in kWh and a per-request completion bonus of order one.
    """

    energy: float = 1.0
    wait: float = 0.1
    late: float = 0.1
    complete: float = 10.0
    travel: float = 0.0
    time_unit: float = 60.0


class EdgeMatrices:
    """Dense travel time, distance, and energy matrices (not symmetric)."""

    def __init__(self, time, dist, energy):
        self.time = np.asarray(time, dtype=np.float64)
        self.dist = np.asarray(dist, dtype=np.float64)
        self.energy = np.asarray(energy, dtype=np.float64)

    def __eq__(self, other):
        if not isinstance(other, EdgeMatrices):
            return NotImplemented
        return (np.array_equal(self.time, other.time)
                and np.array_equal(self.dist, other.dist)
                and np.array_equal(self.energy, other.energy))


class Instance:
    def __init__(self, nodes, edges, requests, fleet, weights, horizon, seed=0):
        self.nodes = list(nodes)
        self.edges = edges
        self.requests = list(requests)
        self.fleet = fleet
        self.weights = weights
        self.horizon = float(horizon)
        self.seed = int(seed)

    @property
    def n(self):
        return len(self.requests)

    @property
    def num_nodes(self):
        return len(self.nodes)

    @property
    def chargers(self):
        return list(range(1 + 2 * self.n, self.num_nodes))

    def kind_of(self, j):
        return self.nodes[j].kind

    def request_of(self, j):
        """Request index served at node j, or None for depot/chargers."""
        n = self.n
        if 1 <= j <= n:
            return j - 1
        if n < j <= 2 * n:
            return j - 1 - n
        return None

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (self.nodes == other.nodes
                and self.edges == other.edges
                and self.requests == other.requests
                and self.fleet == other.fleet
                and self.weights == other.weights
                and self.horizon == other.horizon
                and self.seed == other.seed)

    def __repr__(self):
        return (f"Instance(n={self.n}, nodes={self.num_nodes}, "
                f"K={self.fleet.vehicles}, seed={self.seed})")


def generate_instance(n, charger_count=1, fleet=None, seed=0, asymmetry=0.2, *,
                      weights=None, area_m=10_000.0, speed_mps=10.0,
                      horizon=14_400.0, window_width=900.0, service_time=60.0,
                      charger_service_time=900.0, energy_per_km=0.15,
                      ride_time_factor=3.0, delivery_slack=600.0,
                      demand_every=900.0):
    """Sample a random instance, deterministic in all arguments.

    Nodes are uniform over a square of side area_m. Travel time is
    Euclidean distance over speed_mps, each directed entry inflated by
    (1 + u) with u ~ Uniform(0, asymmetry); energy is energy_per_km
    times distance with an independent directed inflation. Pickup
    windows are window_width wide with the open time drawn so that both
    stops can still reach the depot inside the horizon; the delivery
    window is the pickup window shifted by the direct travel time plus
    delivery_slack on the close side.

    Window opens are drawn from the first n * demand_every seconds (capped
    by the horizon feasibility bound) so demand density per hour stays
    roughly constant across sizes; vehicles idling for hours in front of
    a lone far-future window would otherwise drown the completion bonus
    in waiting cost. Pass demand_every=None to spread windows over the
    whole feasible horizon instead.
    """
    if n < 1:
        raise ValueError("need at least one request")
    if charger_count < 1:
        raise ValueError("need at least one charging station")
    if ride_time_factor < 1.0:
        raise ValueError("ride_time_factor below 1 makes direct rides illegal")
    if fleet is None:
        fleet = FleetParams()
    if weights is None:
        weights = CostWeights()

    rng = np.random.default_rng(seed)
    v = 1 + 2 * n + charger_count
    xy = rng.uniform(0.0, area_m, size=(v, 2))
    diff = xy[:, None, :] - xy[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=-1))
    time = (dist / speed_mps) * (1.0 + rng.uniform(0.0, asymmetry, size=(v, v)))
    energy = energy_per_km * (dist / 1000.0) * (1.0 + rng.uniform(0.0, asymmetry, size=(v, v)))
    np.fill_diagonal(time, 0.0)
    np.fill_diagonal(energy, 0.0)

    nodes = [Node(0, KIND_DEPOT, float(xy[0, 0]), float(xy[0, 1]),
                  0.0, float(horizon), 0.0, 0)]
    requests = []
    for i in range(n):
        p, d = 1 + i, 1 + n + i
        t_direct = float(time[p, d])
        # latest window open keeping pickup and delivery depot-reachable in the horizon
        a_hi = min(horizon - window_width - float(time[p, 0]),
                   horizon - window_width - t_direct - delivery_slack - float(time[d, 0]))
        if a_hi <= 0.0:
            raise ValueError(f"horizon too short for request {i}")
        if demand_every is not None:
            a_hi = min(a_hi, n * demand_every)
        a_p = float(rng.uniform(0.0, a_hi))
        nodes.append(Node(p, KIND_PICKUP, float(xy[p, 0]), float(xy[p, 1]),
                          a_p, a_p + window_width, service_time, 1))
        requests.append(Request(i, p, d, ride_time_factor * t_direct))
    for i in range(n):
        p, d = 1 + i, 1 + n + i
        t_direct = float(time[p, d])
        a_p = nodes[p].a
        nodes.append(Node(d, KIND_DELIVERY, float(xy[d, 0]), float(xy[d, 1]),
                          a_p + t_direct,
                          a_p + window_width + t_direct + delivery_slack,
                          service_time, -1))
    for c in range(charger_count):
        j = 1 + 2 * n + c
        nodes.append(Node(j, KIND_CHARGER, float(xy[j, 0]), float(xy[j, 1]),
                          0.0, float(horizon), charger_service_time, 0))

    # every node must be able to reach the depot on the safety reserve
    worst = float(energy[:, 0].max())
    if worst / fleet.battery_kwh > 1.0 - fleet.soc_reserve:
        raise ValueError("battery too small: depot unreachable from some node")

    return Instance(nodes, EdgeMatrices(time, dist, energy), requests,
                    fleet, weights, horizon, seed)


@dataclass
class Violation:
    field: str
    where: int        # node, request, or edge-row index; -1 for instance-level
    message: str


def validate(inst):
    """Check every structural invariant; returns a list of Violations."""
    out = []
    n = inst.n
    v = inst.num_nodes

    if v < 1 or inst.nodes[0].kind != KIND_DEPOT:
        out.append(Violation("kind", 0, "node 0 must be the depot"))
    if sum(1 for nd in inst.nodes if nd.kind == KIND_DEPOT) != 1:
        out.append(Violation("kind", -1, "exactly one depot required"))
    if v < 1 + 2 * n:
        out.append(Violation("nodes", -1, "fewer nodes than 1 + 2n"))
        return out

    for j, nd in enumerate(inst.nodes):
        if nd.id != j:
            out.append(Violation("id", j, f"node id {nd.id} out of order"))
        expected = (KIND_DEPOT if j == 0 else
                    KIND_PICKUP if j <= n else
                    KIND_DELIVERY if j <= 2 * n else
                    KIND_CHARGER)
        if nd.kind != expected:
            out.append(Violation("kind", j, f"expected {expected}, got {nd.kind}"))
        if nd.a > nd.l:
            out.append(Violation("window", j, f"window closes before it opens ({nd.a} > {nd.l})"))
        if nd.sigma < 0:
            out.append(Violation("sigma", j, "negative service time"))
        if nd.kind == KIND_PICKUP and nd.q <= 0:
            out.append(Violation("q", j, "pickup load change must be positive"))
        if nd.kind == KIND_DELIVERY:
            twin = inst.nodes[j - n]
            if nd.q >= 0:
                out.append(Violation("q", j, "delivery load change must be negative"))
            elif nd.q != -twin.q:
                out.append(Violation("q", j, "delivery must undo its pickup's load change"))
        if nd.kind in (KIND_DEPOT, KIND_CHARGER) and nd.q != 0:
            out.append(Violation("q", j, "depot and chargers carry no load change"))

    for r in inst.requests:
        if r.pickup != 1 + r.id or r.delivery != 1 + n + r.id:
            out.append(Violation("request", r.id, "pickup/delivery indices break node ordering"))
            continue
        if r.max_ride < inst.edges.time[r.pickup, r.delivery]:
            out.append(Violation("maxRide", r.id, "ride limit below direct travel time"))

    for name in ("time", "dist", "energy"):
        m = getattr(inst.edges, name)
        if m.shape != (v, v):
            out.append(Violation(name, -1, f"matrix shape {m.shape} != ({v}, {v})"))
            continue
        if not np.all(np.isfinite(m)):
            out.append(Violation(name, -1, "non-finite entries"))
        if (m < 0).any():
            row = int(np.argwhere(m < 0)[0][0])
            out.append(Violation(name, row, "negative entries"))
        if np.abs(np.diagonal(m)).max(initial=0.0) != 0.0:
            out.append(Violation(name, -1, "nonzero diagonal"))

    f = inst.fleet
    if f.vehicles < 1:
        out.append(Violation("vehicles", -1, "need at least one vehicle"))
    if f.capacity < 1:
        out.append(Violation("capacity", -1, "capacity below one"))
    if f.battery_kwh <= 0:
        out.append(Violation("batteryKwh", -1, "battery capacity must be positive"))
    if not 0.0 <= f.soc_reserve < 1.0:
        out.append(Violation("socReserve", -1, "reserve must lie in [0, 1)"))
    w = inst.weights
    for wname in ("energy", "wait", "late", "complete", "travel"):
        if getattr(w, wname) < 0:
            out.append(Violation("weights." + wname, -1, "negative weight"))
    if w.time_unit <= 0:
        out.append(Violation("weights.timeUnit", -1, "time unit must be positive"))
    if inst.horizon <= 0:
        out.append(Violation("horizon", -1, "horizon must be positive"))

    # the simulator relies on the depot being reachable on the reserve from anywhere
    if inst.edges.energy.shape == (v, v) and f.battery_kwh > 0:
        worst = float(inst.edges.energy[:, 0].max())
        if worst / f.battery_kwh > 1.0 - f.soc_reserve:
            out.append(Violation("energy", -1, "depot unreachable on reserve from some node"))
    return out


@dataclass
class FeatureTensors:
    """Min-max scaled model inputs plus the constants needed to invert them."""

    node: np.ndarray    # [V, 10]: one-hot kind, x, y, a, l, sigma, q
    edge: np.ndarray    # [V, V, 3]: travel time, distance, energy / B
    scales: dict = field(default_factory=dict)


def _minmax(values, lo, hi):
    if hi <= lo:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def normalize_features(inst):
    """Scale node and edge attributes to [0, 1].

    Coordinates, service times, and load changes are min-max scaled per
    instance; time windows are divided by the horizon; edge time and
    distance are min-max scaled over off-diagonal entries; energy is
    expressed as a fraction of the battery capacity. A degenerate range
    (max equal to min) maps to zero.
    """
    v = inst.num_nodes
    kind_idx = {k: i for i, k in enumerate(KINDS)}
    node = np.zeros((v, 10))
    xs = np.array([nd.x for nd in inst.nodes])
    ys = np.array([nd.y for nd in inst.nodes])
    sig = np.array([nd.sigma for nd in inst.nodes])
    qs = np.array([float(nd.q) for nd in inst.nodes])
    for j, nd in enumerate(inst.nodes):
        node[j, kind_idx[nd.kind]] = 1.0
    node[:, 4] = _minmax(xs, xs.min(), xs.max())
    node[:, 5] = _minmax(ys, ys.min(), ys.max())
    node[:, 6] = np.array([nd.a for nd in inst.nodes]) / inst.horizon
    node[:, 7] = np.minimum(np.array([nd.l for nd in inst.nodes]) / inst.horizon, 1.0)
    node[:, 8] = _minmax(sig, sig.min(), sig.max())
    node[:, 9] = _minmax(qs, qs.min(), qs.max())

    off = ~np.eye(v, dtype=bool)
    edge = np.zeros((v, v, 3))
    t, d = inst.edges.time, inst.edges.dist
    t_lo, t_hi = (float(t[off].min()), float(t[off].max())) if v > 1 else (0.0, 0.0)
    d_lo, d_hi = (float(d[off].min()), float(d[off].max())) if v > 1 else (0.0, 0.0)
    edge[:, :, 0] = np.where(off, _minmax(t, t_lo, t_hi), 0.0)
    edge[:, :, 1] = np.where(off, _minmax(d, d_lo, d_hi), 0.0)
    edge[:, :, 2] = inst.edges.energy / inst.fleet.battery_kwh

    scales = {"x": (float(xs.min()), float(xs.max())),
              "y": (float(ys.min()), float(ys.max())),
              "sigma": (float(sig.min()), float(sig.max())),
              "q": (float(qs.min()), float(qs.max())),
              "time": (t_lo, t_hi), "dist": (d_lo, d_hi),
              "horizon": inst.horizon, "battery": inst.fleet.battery_kwh}
    return FeatureTensors(node, edge, scales)


def save(inst):
    """Serialize to versioned JSON bytes; floats round-trip exactly."""
    doc = {
        "schema": SCHEMA_INSTANCE,
        "seed": inst.seed,
        "n": inst.n,
        "horizon": inst.horizon,
        "fleet": {"vehicles": inst.fleet.vehicles,
                  "capacity": inst.fleet.capacity,
                  "batteryKwh": inst.fleet.battery_kwh,
                  "socReserve": inst.fleet.soc_reserve,
                  "initialSoc": inst.fleet.initial_soc},
        "weights": {"energy": inst.weights.energy, "wait": inst.weights.wait,
                    "late": inst.weights.late, "complete": inst.weights.complete,
                    "travel": inst.weights.travel, "timeUnit": inst.weights.time_unit},
        "nodes": [{"id": nd.id, "kind": nd.kind, "x": nd.x, "y": nd.y,
                   "a": nd.a, "l": nd.l, "sigma": nd.sigma, "q": nd.q}
                  for nd in inst.nodes],
        "requests": [{"id": r.id, "pickup": r.pickup, "delivery": r.delivery,
                      "maxRide": r.max_ride} for r in inst.requests],
        "edges": {"time": inst.edges.time.tolist(),
                  "dist": inst.edges.dist.tolist(),
                  "energy": inst.edges.energy.tolist()},
    }
    return (json.dumps(doc, indent=1) + "\n").encode()


def load(data):
    """Parse instance JSON produced by save(); inverse of save on valid data."""
    if isinstance(data, bytes):
        data = data.decode("utf-8", errors="replace")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as e:
        raise InstanceFormatError(f"malformed instance JSON at byte {e.pos}: {e.msg}") from e
    if not isinstance(doc, dict) or "schema" not in doc:
        raise InstanceFormatError("not an instance document: missing schema field")
    if doc["schema"] != SCHEMA_INSTANCE:
        raise InstanceFormatError(
            f"unsupported schema {doc['schema']!r}, expected {SCHEMA_INSTANCE!r}")
    try:
        fl = doc["fleet"]
        fleet = FleetParams(int(fl["vehicles"]), int(fl["capacity"]),
                            float(fl["batteryKwh"]), float(fl["socReserve"]),
                            float(fl.get("initialSoc", 1.0)))
        wt = doc["weights"]
        weights = CostWeights(float(wt["energy"]), float(wt["wait"]), float(wt["late"]),
                              float(wt["complete"]), float(wt.get("travel", 0.0)),
                              float(wt.get("timeUnit", 60.0)))
        nodes = [Node(int(nd["id"]), str(nd["kind"]), float(nd["x"]), float(nd["y"]),
                      float(nd["a"]), float(nd["l"]), float(nd["sigma"]), int(nd["q"]))
                 for nd in doc["nodes"]]
        requests = [Request(int(r["id"]), int(r["pickup"]), int(r["delivery"]),
                            float(r["maxRide"])) for r in doc["requests"]]
        edges = EdgeMatrices(doc["edges"]["time"], doc["edges"]["dist"],
                             doc["edges"]["energy"])
        inst = Instance(nodes, edges, requests, fleet, weights,
                        float(doc["horizon"]), int(doc.get("seed", 0)))
    except (KeyError, TypeError, ValueError) as e:
        raise InstanceFormatError(f"malformed instance field: {e}") from e
    for nd in inst.nodes:
        if nd.kind not in KINDS:
            raise InstanceFormatError(f"unknown node kind {nd.kind!r}")
    if int(doc["n"]) != inst.n:
        raise InstanceFormatError("request count does not match n")
    return inst
