"""Gradient-descent loop over the flow-matching objective.

Pretraining runs the base (context-free) forward: plans are ignored and the
model sees x_t, t, and text only. Finetuning re-clones the context pathway
from the base weights, then trains either everything (temporal fusion,
sequence concat, adaln) or only the context branch with the base frozen
(controlnet).

Batches are bucketed by frame count so every batch stacks equal-length
motions without padding. Order, time draws, noise draws, and prompt drops
all derive from the config seed, so single-threaded runs are repeatable.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import NonFinite
from .flow import FlowBatch, fm_loss
from .model import CondArch
from .tasks import FramePlan

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    lr: float = 5e-5
    batch_size: int = 32
    steps: int = 1000
    cond_drop: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.steps < 1:
            raise ValueError("steps must be positive")
        if not 0.0 <= self.cond_drop <= 1.0:
            raise ValueError("cond_drop must be a probability")


@dataclass
class TrainSample:
    """One training example: a normalized target motion, its prompt token
    ids, and an optional frame plan (already in normalized space)."""

    x1: np.ndarray  # (T, 201) float32
    tokens: list[int]
    plan: FramePlan | None = None

    def __post_init__(self):
        self.x1 = np.ascontiguousarray(self.x1, dtype=np.float32)
        if self.plan is not None and len(self.plan) != self.x1.shape[0]:
            raise ValueError("plan length must match motion length")


@dataclass
class LossCurve:
    steps: list[int] = field(default_factory=list)
    losses: list[float] = field(default_factory=list)

    def append(self, step: int, loss: float) -> None:
        self.steps.append(step)
        self.losses.append(loss)

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["step", "loss"])
            writer.writerows(zip(self.steps, self.losses))

    @staticmethod
    def load_csv(path) -> "LossCurve":
        curve = LossCurve()
        with open(path, newline="") as f:
            reader = csv.reader(f)
            next(reader)
            for row in reader:
                curve.append(int(row[0]), float(row[1]))
        return curve


def _bucket_batches(samples, batch_size, rng, use_plans):
    """One epoch of index batches: equal length within a batch, seeded
    shuffle within buckets and over the batch order."""
    buckets: dict[tuple, list[int]] = {}
    for i, s in enumerate(samples):
        key = (s.x1.shape[0], use_plans and s.plan is not None)
        buckets.setdefault(key, []).append(i)
    batches = []
    for key in sorted(buckets):
        order = rng.permutation(buckets[key])
        for lo in range(0, len(order), batch_size):
            batches.append([int(j) for j in order[lo : lo + batch_size]])
    perm = rng.permutation(len(batches))
    return [batches[int(k)] for k in perm]


def _make_batch(samples, index_batch, use_plans, device):
    chosen = [samples[i] for i in index_batch]
    x1 = torch.stack([torch.from_numpy(s.x1) for s in chosen]).to(device)
    tokens = [s.tokens for s in chosen]
    plans = None
    if use_plans and chosen[0].plan is not None:
        plans = [s.plan for s in chosen]
    return FlowBatch(x1=x1, tokens=tokens, plans=plans)


def _run_loop(model, samples, tc: TrainConfig, use_plans, csv_path):
    if not samples:
        raise ValueError("dataset is empty")
    device = next(model.parameters()).device
    trainable = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(trainable, lr=tc.lr, betas=ADAM_BETAS, eps=ADAM_EPS)
    draw = torch.Generator().manual_seed(tc.seed)
    order = np.random.default_rng(tc.seed)
    curve = LossCurve()
    epoch: list[list[int]] = []
    model.train()
    for step in range(tc.steps):
        if not epoch:
            epoch = _bucket_batches(samples, tc.batch_size, order, use_plans)
        batch = _make_batch(samples, epoch.pop(0), use_plans, device)
        try:
            loss = fm_loss(model, batch, generator=draw, cond_drop=tc.cond_drop)
        except NonFinite as err:
            raise NonFinite(str(err), step=step) from err
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        curve.append(step, float(loss.item()))
    model.eval()
    if csv_path is not None:
        curve.save_csv(csv_path)
    return curve


def train(model, samples, tc: TrainConfig, csv_path=None) -> LossCurve:
    """Pretrain the base pathway: every forward runs context-free."""
    for p in model.parameters():
        p.requires_grad_(True)
    return _run_loop(model, samples, tc, use_plans=False, csv_path=csv_path)


def finetune(model, samples, tc: TrainConfig, csv_path=None) -> LossCurve:
    """Adapt a pretrained model to in-context tasks.

    The context pathway restarts from the base weights. Controlnet then
    trains only the cloned branch and its injections; the other
    architectures train everything.
    """
    model.init_context_from_base()
    if model.cfg.cond_arch is CondArch.CONTROLNET:
        model.freeze_base()
    else:
        for p in model.parameters():
            p.requires_grad_(True)
    return _run_loop(model, samples, tc, use_plans=True, csv_path=csv_path)
