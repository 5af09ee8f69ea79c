"""Policy-gradient training with shared-baseline multi-start rollouts.

Each instance in a batch is rolled out from several distinct forced
first pickups; the mean episode reward of that group is its baseline,
so advantages sum to zero per group by construction. Gradients
accumulate instance by instance (one tape each, keeping peak memory at
a single graph) and a clipped Adam step applies once per batch.
Training on one size hands its best checkpoint to the next size in the
curriculum, which must stay within a relative band of its zero-shot
score to count as a transfer.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .environment import Env
from .instance import generate_instance, normalize_features
from .policy import (Policy, PolicyConfig, greedy_rollout, load_policy,
                     rollout_episode, save_policy)

CURRICULUM_SIZES = [8, 10, 12, 14, 17, 21]


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(t.data) for k, t in params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in params.items()}

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)

    def state(self):
        return {"t": self.t,
                "m": {k: a.ravel().tolist() for k, a in self.m.items()},
                "v": {k: a.ravel().tolist() for k, a in self.v.items()}}

    def load_state(self, st):
        self.t = st["t"]
        for k in self.m:
            self.m[k] = np.array(st["m"][k]).reshape(self.m[k].shape)
            self.v[k] = np.array(st["v"][k]).reshape(self.v[k].shape)


def clip_grad_norm(params, max_norm):
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    total = np.sqrt(total)
    if np.isfinite(total) and total > max_norm:
        s = max_norm / total
        for p in params.values():
            if p.grad is not None:
                p.grad *= s
    return float(total)


def pomo_starts(env, k_p):
    """Distinct forced first actions: feasible pickups in ascending order.

    Degenerate states with no feasible pickup fall back to whatever the
    mask allows so at least one rollout always runs.
    """
    m = env.mask(env.reset())
    starts = [j for j in range(1, 1 + env.n) if m[j]]
    if not starts:
        starts = [j for j in range(len(m)) if m[j]]
    return starts[:k_p]


def pomo_advantages(rewards):
    """Shared-baseline advantages; sums to zero within each group."""
    r = np.asarray(rewards, dtype=np.float64)
    return r - r.mean()


@dataclass
class UpdateStats:
    loss: float = 0.0
    mean_reward: float = 0.0
    grad_norm: float = 0.0
    skipped: bool = False


def reinforce_update(policy, opt, instances, rng, k_p, grad_clip):
    """One batch update; gradients accumulate per instance.

    A non-finite loss or gradient aborts the whole update with the
    parameters untouched.
    """
    policy.zero_grad()
    total_loss = 0.0
    total_reward = 0.0
    groups = 0
    try:
        for inst in instances:
            env = Env(inst)
            feats = normalize_features(inst)
            tape = ad.Tape()
            enc = policy.encode(tape, feats)
            starts = pomo_starts(env, k_p)
            lps = []
            rewards = []
            for a0 in starts:
                state, lp, _ = rollout_episode(policy, env, tape, rng=rng,
                                               first_action=a0, enc=enc,
                                               feats=feats)
                rewards.append(env.solution(state).reward)
                lps.append(ad.reshape(tape, lp, (1,)))
            adv = pomo_advantages(rewards)
            weighted = ad.mul(tape, ad.concat(tape, lps, 0), ad.Tensor(adv))
            loss = ad.scale(tape, ad.tsum(tape, weighted),
                            -1.0 / (len(starts) * len(instances)))
            tape.backward(loss)
            total_loss += float(loss.data)
            total_reward += float(np.mean(rewards))
            groups += 1
    except FloatingPointError:
        policy.zero_grad()
        return UpdateStats(skipped=True)
    norm = clip_grad_norm(policy.params, grad_clip)
    if not np.isfinite(norm):
        policy.zero_grad()
        return UpdateStats(skipped=True)
    opt.step()
    policy.zero_grad()
    return UpdateStats(loss=total_loss, mean_reward=total_reward / max(1, groups),
                       grad_norm=norm)


@dataclass
class TrainConfig:
    n: int = 8
    epochs: int = 10
    steps_per_epoch: int = 25
    batch: int = 32
    k_p: int = 8
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_num: float = 1e-8
    grad_clip: float = 1.0
    seed: int = 0
    val_size: int = 64
    charger_count: int = 1
    vehicles: int = 2
    capacity: int = 3
    sizes: list = None          # mixed-size training: n sampled uniformly
    curriculum: list = None     # stage sizes for curriculum_train
    growth_factor: float = 1.2
    epochs_per_stage: int = None
    weights: object = None      # CostWeights for generated instances
    gen_kwargs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.k_p < 2:
            raise ValueError("k_p must be >= 2: the shared baseline needs "
                             "more than one rollout")
        if self.growth_factor <= 1.0:
            raise ValueError("growth_factor must exceed 1")


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)   # dicts, one per epoch
    best_val: float = -np.inf
    best_checkpoint: bytes = b""
    final_checkpoint: bytes = b""

    def sigma_50(self):
        """Std of the validation reward over the last <= 50 epochs."""
        vals = [r["val_reward"] for r in self.rows if r["epoch"] > 0]
        if not vals:
            return float("nan")
        return float(np.std(vals[-50:]))

    def to_csv(self):
        head = ["epoch", "trainLoss", "valReward", "valCompletion",
                "gradNorm", "seconds"]
        cols = ["epoch", "train_loss", "val_reward", "val_completion",
                "grad_norm", "seconds"]
        lines = [",".join(head)]
        for r in self.rows:
            lines.append(",".join(f"{r[c]:.6f}" if isinstance(r[c], float)
                                  else str(r[c]) for c in cols))
        return "\n".join(lines) + "\n"


def _make_instance(cfg, seed, n=None):
    from .instance import FleetParams
    fleet = FleetParams(vehicles=cfg.vehicles, capacity=cfg.capacity)
    return generate_instance(cfg.n if n is None else n,
                             charger_count=cfg.charger_count, fleet=fleet,
                             seed=seed, weights=cfg.weights, **cfg.gen_kwargs)


def validation_set(cfg):
    base = cfg.seed * 1_000_003 + 777_000_000 + cfg.n
    return [_make_instance(cfg, base + i) for i in range(cfg.val_size)]


def validate(policy, instances):
    """Greedy-decode the held-out set; returns (mean reward, mean completion %)."""
    sols = [greedy_rollout(policy, inst) for inst in instances]
    return (float(np.mean([s.reward for s in sols])),
            float(np.mean([s.metrics["completion_pct"] for s in sols])))


def train(cfg, policy=None, policy_config=None, opt_state=None,
          start_epoch=0):
    """Train on one size; epoch 0 records the pre-update validation.

    Resuming passes the checkpoint's optimizer state and the number of
    epochs already done, so epoch numbering continues seamlessly.
    """
    if policy is None:
        policy = Policy(policy_config or PolicyConfig(seed=cfg.seed))
    opt = Adam(policy.params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
               eps=cfg.eps_num)
    if opt_state is not None:
        opt.load_state(opt_state)
    rng = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, cfg.n, 17, start_epoch]))
    val = validation_set(cfg)
    report = TrainReport()

    t0 = time.time()
    v0, c0 = validate(policy, val)
    if start_epoch == 0 and cfg.epochs > 0:
        report.rows.append({"epoch": 0, "train_reward": float("nan"),
                            "val_reward": v0, "val_completion": c0,
                            "train_loss": float("nan"),
                            "grad_norm": float("nan"),
                            "seconds": time.time() - t0})
    report.best_val = v0
    report.best_checkpoint = save_policy(policy)

    inst_seed = np.random.default_rng(
        np.random.SeedSequence([cfg.seed, cfg.n, 23, start_epoch]))
    for epoch in range(start_epoch + 1, start_epoch + cfg.epochs + 1):
        losses, rewards, norms = [], [], []
        for _ in range(cfg.steps_per_epoch):
            ns = (cfg.sizes[inst_seed.integers(len(cfg.sizes))]
                  if cfg.sizes else None)
            batch = [_make_instance(cfg, int(inst_seed.integers(2 ** 31)), n=ns)
                     for _ in range(cfg.batch)]
            st = reinforce_update(policy, opt, batch, rng, cfg.k_p,
                                  cfg.grad_clip)
            if not st.skipped:
                losses.append(st.loss)
                rewards.append(st.mean_reward)
                norms.append(st.grad_norm)
        vr, vc = validate(policy, val)
        report.rows.append({"epoch": epoch,
                            "train_reward": float(np.mean(rewards)) if rewards else float("nan"),
                            "val_reward": vr, "val_completion": vc,
                            "train_loss": float(np.mean(losses)) if losses else float("nan"),
                            "grad_norm": float(np.mean(norms)) if norms else float("nan"),
                            "seconds": time.time() - t0})
        if vr >= report.best_val:
            report.best_val = vr
            report.best_checkpoint = save_policy(policy)
    final_state = opt.state()
    final_state["epoch"] = start_epoch + cfg.epochs
    report.final_checkpoint = save_policy(policy, opt_state=final_state)
    return policy, report


@dataclass
class StageResult:
    size: int
    zero_shot: float
    best_val: float
    passed: bool


def curriculum_train(stage_cfgs, policy=None, policy_config=None,
                     pass_band=0.05):
    """Train through increasing sizes, keeping each stage's best weights.

    A stage passes when its best validation reward stays within the
    relative band below the incoming policy's zero-shot reward on the
    new size (transfer must not regress), and fine-tuning usually
    pushes it above.
    """
    results = []
    for cfg in stage_cfgs:
        if policy is None:
            policy = Policy(policy_config or PolicyConfig(seed=cfg.seed))
        zero, _ = validate(policy, validation_set(cfg))
        policy, report = train(cfg, policy=policy)
        best = report.best_val
        passed = best >= zero - pass_band * abs(zero)
        results.append(StageResult(cfg.n, zero, best, passed))
        policy, _ = load_policy(report.best_checkpoint)
    return policy, results
