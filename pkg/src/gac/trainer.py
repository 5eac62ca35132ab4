"""Training loop, evaluation, kappa schedule, config files and CSV logs."""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .actor import GaussianPolicy, fit_mse, fit_wmse, update_covariance
from .critic import CriticNetwork, TargetCritic, critic_update, target_sync
from .envs import ENV_NAMES, make_env
from .errors import ConfigError, SolverDiverged
from .gaussmath import Gaussian, gauss_entropy
from .guide import MODES, GuideConfig, compute_guides
from .nn import save_tensors
from .replay import ReplayBuffer, Transition

LOG_COLUMNS = ("step", "test_return_mean", "test_return_stderr", "critic_loss",
               "actor_loss", "eta", "omega", "kl_realized", "entropy", "kappa")

BASE_VARIANCE = 0.01


@dataclass
class TrainConfig:
    env: str = "lqr1d"
    seed: int = 0
    steps: int = 50_000
    epsilon: float = 1e-4
    mode: str = "GAC-0"
    samples: int = 1
    gamma: float = 0.99
    batch: int = 256
    target_samples: int = 10
    tau: float = 0.001
    critic_lr: float = 1e-3
    actor_lr: float = 1e-4
    buffer: int = 1_000_000
    critic_hidden: tuple = (64, 64)
    actor_hidden: tuple = (64, 64)
    warmup: int = 1000
    kappa_period: int = 5000
    eval_period: int = 5000
    eval_episodes: int = 10
    eval_seed: int = 12345
    horizon: int = 0
    actor_loss: str = "mse"

    def validate(self) -> "TrainConfig":
        if self.env not in ENV_NAMES:
            raise ConfigError(f"env must be one of {ENV_NAMES}, got {self.env!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.actor_loss not in ("mse", "wmse"):
            raise ConfigError("actor_loss must be 'mse' or 'wmse'")
        for name in ("steps", "samples", "batch", "target_samples", "buffer",
                     "kappa_period", "eval_period", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.warmup < 0 or self.horizon < 0:
            raise ConfigError("warmup and horizon must be non-negative")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError("gamma must lie in (0, 1)")
        if not self.epsilon > 0.0:
            raise ConfigError("epsilon must be positive")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError("tau must lie in (0, 1]")
        if self.critic_lr <= 0 or self.actor_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if any(h < 1 for h in self.critic_hidden + self.actor_hidden):
            raise ConfigError("hidden sizes must be positive")
        return self


def _convert(name: str, text: str, default):
    try:
        if isinstance(default, tuple):
            text = text.strip().strip("()[]")
            return tuple(int(v) for v in text.replace(",", " ").split())
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            f = float(text)
            if f != int(f):
                raise ValueError
            return int(f)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"bad value for {name}: {text!r}") from None


def parse_config(text: str, **overrides) -> TrainConfig:
    """``key = value`` lines, ``#`` starts a comment; unknown keys are errors."""
    defaults = TrainConfig()
    known = {f.name: getattr(defaults, f.name) for f in dataclasses.fields(TrainConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, val, known[key])
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values).validate()


def load_config(path, **overrides) -> TrainConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, **overrides)


def base_entropy(action_dim: int) -> float:
    """Entropy of N(0, 0.01 I), the floor of the kappa schedule."""
    return gauss_entropy(Gaussian(np.zeros(action_dim), BASE_VARIANCE * np.eye(action_dim)))


def kappa_schedule(current_entropy: float, base: float) -> float:
    return max(0.99 * (current_entropy - base) + base, base)


def evaluate(actor, env, episodes: int, seed: int):
    """Undiscounted returns of the mean policy; returns ``(mean, returns)``."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    rng = np.random.default_rng(seed)
    returns = np.empty(episodes)
    for i in range(episodes):
        s = env.reset(int(rng.integers(2 ** 31)))
        total = 0.0
        while True:
            res = env.step(actor.act(s, explore=False))
            total += res.reward
            s = res.state
            if res.done:
                break
        returns[i] = total
    return float(returns.mean()), returns


@dataclass
class TrainLog:
    rows: list = field(default_factory=list)

    def add(self, **row):
        if self.rows and row["step"] <= self.rows[-1]["step"]:
            raise ValueError("log steps must increase")
        self.rows.append(row)

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        lines = [",".join(LOG_COLUMNS)]
        for r in self.rows:
            cells = [str(int(r["step"]))] + [_fmt(r[c]) for c in LOG_COLUMNS[1:]]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_csv())


def _fmt(x) -> str:
    x = float(x)
    return "nan" if math.isnan(x) else "%.9g" % x


def read_log(path) -> dict[str, np.ndarray]:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = [[float(v) for v in ln.strip().split(",")] for ln in fh if ln.strip()]
    arr = np.array(data, dtype=np.float64).reshape(-1, len(header))
    return {name: arr[:, i] for i, name in enumerate(header)}


@dataclass
class TrainResult:
    log: TrainLog
    actor: GaussianPolicy
    critic: CriticNetwork
    config: TrainConfig


def build_agent(cfg: TrainConfig, env, rng: np.random.Generator):
    spec = env.spec
    actor = GaussianPolicy(spec.state_dim, spec.action_dim, spec.low, spec.high,
                           hidden=cfg.actor_hidden, rng=rng, lr=cfg.actor_lr)
    critic = CriticNetwork(spec.state_dim, spec.action_dim, hidden=cfg.critic_hidden,
                           rng=rng, lr=cfg.critic_lr)
    return actor, critic


def train(cfg: TrainConfig, out_dir=None, on_step=None) -> TrainResult:
    """Run the collect-then-learn loop for ``cfg.steps`` environment steps.

    Random streams for initialization, environment resets, exploration,
    learning and evaluation are spawned from ``cfg.seed`` so each is
    reproducible on its own. ``on_step(t, info)`` is called after every step.
    """
    cfg.validate()
    seeds = np.random.SeedSequence(cfg.seed).spawn(4)
    init_rng, env_rng, explore_rng, learn_rng = (np.random.default_rng(s) for s in seeds)
    horizon = cfg.horizon or None
    env = make_env(cfg.env, horizon=horizon)
    eval_env = make_env(cfg.env, horizon=horizon)
    actor, critic = build_agent(cfg, env, init_rng)
    target = TargetCritic(critic)
    spec = env.spec
    buf = ReplayBuffer(min(cfg.buffer, cfg.steps), spec.state_dim, spec.action_dim)
    E0 = base_entropy(spec.action_dim)
    gcfg = GuideConfig(epsilon=cfg.epsilon, kappa=kappa_schedule(actor.entropy(), E0),
                       mode=cfg.mode, samples=cfg.samples)
    log = TrainLog()
    last = dict(critic_loss=np.nan, actor_loss=np.nan, eta=np.nan, omega=np.nan,
                kl_realized=np.nan)

    def log_row(t):
        mean, rets = evaluate(actor, eval_env, cfg.eval_episodes, cfg.eval_seed)
        stderr = float(rets.std(ddof=1) / np.sqrt(len(rets))) if len(rets) > 1 else 0.0
        log.add(step=t, test_return_mean=mean, test_return_stderr=stderr,
                entropy=actor.entropy(), kappa=gcfg.kappa, **last)

    def flush():
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            log.write(os.path.join(out_dir, "log.csv"))
            save_tensors(os.path.join(out_dir, "actor.txt"), actor.tensors())
            save_tensors(os.path.join(out_dir, "critic.txt"), critic.tensors())

    log_row(0)
    s = env.reset(int(env_rng.integers(2 ** 31)))
    try:
        for t in range(1, cfg.steps + 1):
            if t <= cfg.warmup:
                a = explore_rng.uniform(spec.low, spec.high)
            else:
                a = actor.act(s, explore_rng, explore=True)
            res = env.step(a)
            buf.push(Transition(s, a, res.reward, res.state, res.terminal))
            s = env.reset(int(env_rng.integers(2 ** 31))) if res.done else res.state

            if t > cfg.warmup:
                batch = buf.sample(cfg.batch, learn_rng)
                last["critic_loss"] = critic_update(critic, target, batch, actor,
                                                    cfg.target_samples, cfg.gamma, learn_rng)
                target_sync(critic, target, cfg.tau)
                guides, sol, _ = compute_guides(critic, actor.mean(batch.states), actor.Sigma,
                                                batch.states, gcfg, learn_rng)
                if cfg.actor_loss == "mse":
                    last["actor_loss"] = fit_mse(actor, batch.states, guides.means)
                else:
                    last["actor_loss"] = fit_wmse(actor, batch.states, guides, sol)
                update_covariance(actor, guides)
                last.update(eta=sol.eta, omega=sol.omega, kl_realized=sol.kl)

            if t % cfg.kappa_period == 0:
                gcfg.kappa = kappa_schedule(actor.entropy(), E0)
            if t % cfg.eval_period == 0:
                log_row(t)
            if on_step is not None:
                on_step(t, dict(last, actor=actor, critic=critic))
    except SolverDiverged:
        flush()
        raise
    flush()
    return TrainResult(log, actor, critic, cfg)


def visited_states(actor, env, episodes: int, seed: int) -> np.ndarray:
    """States seen while rolling out the mean policy, as in :func:`evaluate`."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(episodes):
        s = env.reset(int(rng.integers(2 ** 31)))
        while True:
            out.append(s)
            res = env.step(actor.act(s, explore=False))
            s = res.state
            if res.done:
                break
    return np.array(out)


def effective_gain(actor, states) -> np.ndarray:
    """K minimizing sum ||phi(s) - (c - K s)||^2 over ``states``; returns K."""
    S = np.atleast_2d(np.asarray(states, dtype=np.float64))
    X = np.hstack([S, np.ones((S.shape[0], 1))])
    coef, *_ = np.linalg.lstsq(X, actor.mean(S), rcond=None)
    return -coef[:-1].T
