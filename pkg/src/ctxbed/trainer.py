"""Joint stochastic-gradient ascent on the bound over (design, critic)."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import diffgraph as dg
from .design import TemperatureSchedule
from .objective import bound_for_batch
from .stochastics import RngStream

TRACE_SCHEMA = "trace/v1"
TRACE_COLUMNS = ("schema", "step", "bound", "lr", "tau", "grad_norm_design", "grad_norm_critic")


class TrainingError(RuntimeError):
    """Training halted; ``step`` is the offending iteration and ``trace`` the records so far."""

    def __init__(self, message: str, step: int, trace: "TrainTrace | None" = None):
        super().__init__(f"{message} at step {step}")
        self.step = step
        self.trace = trace


@dataclass
class CriticSpec:
    hidden: list = field(default_factory=lambda: [256])
    embed_dim: int = 32
    batch_norm: bool = False
    hidden_m: list | None = None


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 256
    lr: float = 1e-3
    lr_decay: float = 0.96
    lr_decay_interval: int = 1000
    design_lr: float | None = None
    critic_lr: float | None = None
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    temperature: TemperatureSchedule = field(default_factory=TemperatureSchedule)
    critic: CriticSpec = field(default_factory=CriticSpec)
    grad_clip: float | None = None
    log_every: int = 1
    fresh_contrastives: int = 0

    def __post_init__(self):
        if isinstance(self.temperature, dict):
            self.temperature = TemperatureSchedule(**self.temperature)
        if isinstance(self.critic, dict):
            self.critic = CriticSpec(**self.critic)
        self.betas = tuple(self.betas)
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        for name in ("lr", "design_lr", "critic_lr"):
            v = getattr(self, name)
            if v is not None and v <= 0:
                raise ValueError(f"{name} must be > 0")
        if not (0 < self.lr_decay <= 1) or self.lr_decay_interval < 1:
            raise ValueError("lr decay factor must be in (0, 1] and its interval >= 1")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be > 0")
        if self.fresh_contrastives < 0:
            raise ValueError("fresh_contrastives must be >= 0")

    def lr_at(self, step: int, base: float | None = None) -> float:
        base = self.lr if base is None else base
        return base * self.lr_decay ** (step // self.lr_decay_interval)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


@dataclass
class TrainTrace:
    records: list[dict] = field(default_factory=list)
    bounds: list[float] = field(default_factory=list)

    def log(self, **record) -> None:
        self.records.append(record)

    @property
    def steps(self) -> list[int]:
        return [r["step"] for r in self.records]

    def final_bound(self, fraction: float = 0.1) -> float:
        """Mean training bound over the last ``fraction`` of steps."""
        n = max(1, int(math.ceil(fraction * len(self.bounds))))
        return float(np.mean(self.bounds[-n:]))

    def initial_bound(self, fraction: float = 0.1) -> float:
        n = max(1, int(math.ceil(fraction * len(self.bounds))))
        return float(np.mean(self.bounds[:n]))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
            w.writeheader()
            for r in self.records:
                row = {k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in TRACE_COLUMNS[1:]}
                w.writerow({"schema": TRACE_SCHEMA, **row})

    @staticmethod
    def read_csv(path) -> list[dict]:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if rows and rows[0].get("schema") != TRACE_SCHEMA:
            raise ValueError(f"{path}: expected schema {TRACE_SCHEMA}, got {rows[0].get('schema')!r}")
        return [{k: (v if k == "schema" else int(v) if k == "step" else float(v)) for k, v in row.items()}
                for row in rows]


# -- Adam --------------------------------------------------------------------------
@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update; returns new arrays without mutating inputs."""
    b1, b2 = betas
    t = state.t + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad * grad
    m_hat = m / (1 - b1**t)
    v_hat = v / (1 - b2**t)
    return param - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


class Adam:
    """Adam over parameter groups ``[(tensors, base_lr)]`` updating tensors in place."""

    def __init__(self, groups: list[tuple[list[dg.Tensor], float]], betas=(0.9, 0.999), eps=1e-8):
        self.groups = [(list(ps), lr) for ps, lr in groups]
        self.betas, self.eps = tuple(betas), eps
        self.state = {id(p): AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
                      for ps, _ in self.groups for p in ps}

    def zero_grad(self) -> None:
        for ps, _ in self.groups:
            for p in ps:
                p.grad = None

    def step(self, lr_scale: float = 1.0) -> None:
        for ps, base in self.groups:
            for p in ps:
                grad = np.zeros_like(p.data) if p.grad is None else p.grad
                p.data, self.state[id(p)] = adam_step(p.data, grad, self.state[id(p)],
                                                      base * lr_scale, self.betas, self.eps)


def _clip(params: list[dg.Tensor], max_norm: float) -> None:
    norm = dg.parameters_grad_norm(params)
    if norm > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad = p.grad * (max_norm / norm)


def optimize(model, C, Cstar, design, critic, config: TrainConfig, rng: RngStream):
    """Run ``config.steps`` iterations of joint ascent. Returns ``(design, critic, trace)``.

    ``design`` may be ``None`` (no action choice) or fixed; only its trainable
    parameters are updated.
    """
    streams = {name: rng.stream(name) for name in ("prior", "noise", "gumbel", "contrastive")}
    design_params = [] if design is None else design.parameters()
    critic_params = critic.parameters()
    opt = Adam([(design_params, config.design_lr or config.lr),
                (critic_params, config.critic_lr or config.lr)], config.betas, config.eps)
    if design is not None and hasattr(design, "schedule"):
        design.schedule = config.temperature
    critic.train()
    trace = TrainTrace()
    for step in range(config.steps):
        est = bound_for_batch(model, design, critic, C, Cstar, config.batch_size, streams, step,
                              config.fresh_contrastives)
        value = est.value
        if not np.isfinite(value):
            raise TrainingError("non-finite loss", step, trace)
        opt.zero_grad()
        dg.backward(-est.tensor)
        gd = dg.parameters_grad_norm(design_params)
        gc = dg.parameters_grad_norm(critic_params)
        if not (np.isfinite(gd) and np.isfinite(gc)):
            raise TrainingError("non-finite gradient", step, trace)
        if config.grad_clip is not None:
            _clip(design_params + critic_params, config.grad_clip)
        decay = config.lr_decay ** (step // config.lr_decay_interval)
        opt.step(decay)
        trace.bounds.append(value)
        if step % config.log_every == 0 or step == config.steps - 1:
            trace.log(step=step, bound=value, lr=config.lr_at(step), tau=config.temperature.tau(step),
                      grad_norm_design=gd, grad_norm_critic=gc)
    critic.eval()
    return design, critic, trace
