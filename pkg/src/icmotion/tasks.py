"""Per-frame task compilation: (source, meta-op) plans and context assembly.

Every downstream task reduces to a length-T plan assigning each frame a
source vector s_i (a real motion frame or the zero sentinel) and one of
three meta-operations: P (preserve), G (generate), E (edit). The model never
sees task names, only the compiled context

    ctx_i = s_i + Emb(op_i)

built from a learnable 3 x 201 embedding table. Sources are expected in the
units the backbone consumes (normalized motion space).

Task patterns:

    text-to-motion, generate-mode trajectory/obstacle   all (0, G)
    edit / reaction / stylization / context-mode traj   all (m_i, E)
    prediction                                          first k (m_i, P), rest *
    backcast                                            last k (m_i, P), rest *
    in-betweening                                       both ends (m_i, P), middle *
    keyframe infill                                     every stride-th (m_i, P), rest *

where * is (0, G) by default or (m_i, E) with star_mode="edit". A two-token
ablation merges E into G (sources kept, validity relaxed to allow G with a
source); the embedding table keeps all three rows so checkpoints stay
shape-compatible.

When source and plan lengths differ (the speed-up edit shrinks time), the
context lane aligns by index: s_i = source[min(i, T_src - 1)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum, IntEnum

import numpy as np
import torch

from .errors import BadSplit, BadStride, MissingSource, TooLong
from .gait import MAX_FRAMES
from .motion import FRAME_DIM, MotionSequence


class MetaOp(IntEnum):
    P = 0
    G = 1
    E = 2


NUM_META_OPS = 3


class TaskKind(Enum):
    T2M = "t2m"
    TRAJ_FOLLOW = "traj_follow"
    OBSTACLE_AVOID = "obstacle_avoid"
    EDIT = "edit"
    REACTION = "reaction"
    STYLIZATION = "stylization"
    PREDICTION = "prediction"
    BACKCAST = "backcast"
    IN_BETWEEN = "in_between"
    KEYFRAME_INFILL = "keyframe_infill"


# kinds whose plan is all (m_i, E) whenever a source is present
_CONTEXT_KINDS = frozenset(
    {TaskKind.EDIT, TaskKind.REACTION, TaskKind.STYLIZATION}
)
# kinds that run all (0, G) without a source and all (m_i, E) with one
_DUAL_MODE_KINDS = frozenset({TaskKind.TRAJ_FOLLOW, TaskKind.OBSTACLE_AVOID})
_PRESERVE_KINDS = frozenset(
    {TaskKind.PREDICTION, TaskKind.BACKCAST, TaskKind.IN_BETWEEN, TaskKind.KEYFRAME_INFILL}
)

DEFAULT_STRIDE = 30  # one second at 30 fps


@dataclass
class TaskParams:
    """Knobs for compile_task. Unset split sizes are sampled from the rng."""

    k: int | None = None  # prediction/backcast preserved length
    head: int | None = None  # in-betweening leading preserved length
    tail: int | None = None  # in-betweening trailing preserved length
    stride: int = DEFAULT_STRIDE  # keyframe infill period
    star_mode: str = "generate"  # "generate" -> (0, G), "edit" -> (m_i, E)
    two_token: bool = False  # merge E into G


@dataclass
class FramePlan:
    sources: np.ndarray  # (T, 201) float32; zero rows are the sentinel
    ops: np.ndarray  # (T,) int64 of MetaOp values
    two_token: bool = False

    def __post_init__(self):
        self.sources = np.ascontiguousarray(self.sources, dtype=np.float32)
        self.ops = np.ascontiguousarray(self.ops, dtype=np.int64)
        if self.sources.ndim != 2 or self.sources.shape[1] != FRAME_DIM:
            raise ValueError(f"sources must be (T, {FRAME_DIM})")
        if self.ops.shape != (self.sources.shape[0],):
            raise ValueError("ops length must match sources")

    def __len__(self) -> int:
        return self.sources.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, FramePlan)
            and self.two_token == other.two_token
            and np.array_equal(self.ops, other.ops)
            and np.array_equal(self.sources, other.sources)
        )


@dataclass
class TaskInstance:
    kind: TaskKind
    plan: FramePlan
    prompt: str
    target: np.ndarray | None = None  # (T, 201) training target, unnormalized or not
    params: TaskParams | None = None  # resolved knobs, for dataset replay


def _source_array(source) -> np.ndarray:
    data = source.data if isinstance(source, MotionSequence) else np.asarray(source)
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2 or data.shape[1] != FRAME_DIM:
        raise ValueError(f"source must be (T, {FRAME_DIM})")
    return data


def align_source(source: np.ndarray, T: int) -> np.ndarray:
    """Index-align a source to plan length: row i is source[min(i, T_src-1)]."""
    idx = np.minimum(np.arange(T), source.shape[0] - 1)
    return source[idx]


def _sample_range(rng, lo: int, hi: int, what: str) -> int:
    if hi < lo:
        raise BadSplit(f"no valid {what} for this length (range [{lo}, {hi}])")
    if rng is None:
        raise ValueError(f"{what} unset and no rng supplied to sample it")
    return int(rng.integers(lo, hi + 1))


def compile_task(
    kind: TaskKind,
    source,
    T: int,
    params: TaskParams | None = None,
    rng=None,
    prompt: str = "",
    target: np.ndarray | None = None,
) -> TaskInstance:
    """Compile a task into a FramePlan per the pattern table above.

    source may be a MotionSequence or a (T_src, 201) array, and is required
    for every kind except T2M and generate-mode trajectory/obstacle tasks.
    Unset prediction/backcast k samples uniform in [ceil(T/4), floor(T/2)];
    unset in-betweening end segments each sample uniform in
    [ceil(0.15 T), floor(0.3 T)].
    """
    params = TaskParams() if params is None else params
    if T < 1:
        raise ValueError("plan length must be positive")
    if T > MAX_FRAMES:
        raise TooLong(f"plan length {T} exceeds {MAX_FRAMES} frames")

    needs_source = kind in _CONTEXT_KINDS or kind in _PRESERVE_KINDS
    if kind in _PRESERVE_KINDS and params.star_mode not in ("generate", "edit"):
        raise ValueError(f"unknown star_mode {params.star_mode!r}")
    src = None if source is None else _source_array(source)
    if needs_source and src is None:
        raise MissingSource(f"{kind.value} requires a source motion")

    zeros = np.zeros((T, FRAME_DIM), dtype=np.float32)
    resolved = replace(params)

    if kind is TaskKind.T2M or (kind in _DUAL_MODE_KINDS and src is None):
        sources, ops = zeros, np.full(T, MetaOp.G, dtype=np.int64)
    elif kind in _CONTEXT_KINDS or kind in _DUAL_MODE_KINDS:
        sources = align_source(src, T)
        ops = np.full(T, MetaOp.E, dtype=np.int64)
    else:
        aligned = align_source(src, T)
        preserve = np.zeros(T, dtype=bool)
        if kind in (TaskKind.PREDICTION, TaskKind.BACKCAST):
            k = params.k
            if k is None:
                k = _sample_range(rng, math.ceil(0.25 * T), math.floor(0.5 * T), "split")
            if not 1 <= k <= T - 1:
                raise BadSplit(f"split k={k} outside [1, {T - 1}]")
            resolved.k = k
            if kind is TaskKind.PREDICTION:
                preserve[:k] = True
            else:
                preserve[T - k :] = True
        elif kind is TaskKind.IN_BETWEEN:
            head, tail = params.head, params.tail
            lo, hi = math.ceil(0.15 * T), math.floor(0.3 * T)
            if head is None:
                head = _sample_range(rng, lo, hi, "head segment")
            if tail is None:
                tail = _sample_range(rng, lo, hi, "tail segment")
            if head < 1 or tail < 1 or head + tail > T - 1:
                raise BadSplit(
                    f"end segments ({head}, {tail}) leave no middle in {T} frames"
                )
            resolved.head, resolved.tail = head, tail
            preserve[:head] = True
            preserve[T - tail :] = True
        else:  # keyframe infill
            stride = params.stride
            if not 2 <= stride <= T - 1:
                raise BadStride(f"stride {stride} outside [2, {T - 1}]")
            preserve[::stride] = True

        if params.star_mode == "edit":
            sources = aligned.copy()
            ops = np.full(T, MetaOp.E, dtype=np.int64)
        else:
            sources = zeros.copy()
            sources[preserve] = aligned[preserve]
            ops = np.full(T, MetaOp.G, dtype=np.int64)
        ops[preserve] = MetaOp.P

    if params.two_token:
        ops = np.where(ops == MetaOp.E, MetaOp.G, ops)

    plan = FramePlan(sources=sources, ops=ops, two_token=params.two_token)
    return TaskInstance(kind=kind, plan=plan, prompt=prompt, target=target, params=resolved)


def build_context(plan: FramePlan, table: torch.Tensor) -> torch.Tensor:
    """ctx_i = s_i + Emb(op_i). Output (T, 201) in the table's dtype/device."""
    if table.shape != (NUM_META_OPS, FRAME_DIM):
        raise ValueError(f"table must be ({NUM_META_OPS}, {FRAME_DIM})")
    sources = torch.as_tensor(plan.sources, dtype=table.dtype, device=table.device)
    ops = torch.as_tensor(plan.ops, dtype=torch.long, device=table.device)
    return sources + table[ops]


def validate_plan(plan: FramePlan) -> list[tuple[int, str]]:
    """Report-style invariant check; empty list means the plan is valid.

    P and E require a real (nonzero) source row; G requires the zero
    sentinel. Two-token plans relax G to allow a source and outlaw E.
    """
    violations: list[tuple[int, str]] = []
    nonzero = np.any(plan.sources != 0.0, axis=1)
    for i, (op, has_src) in enumerate(zip(plan.ops, nonzero)):
        if op == MetaOp.P and not has_src:
            violations.append((i, "P frame has no source"))
        elif op == MetaOp.E:
            if plan.two_token:
                violations.append((i, "E op present in two-token mode"))
            elif not has_src:
                violations.append((i, "E frame has no source"))
        elif op == MetaOp.G and has_src and not plan.two_token:
            violations.append((i, "G frame carries a source"))
        elif op not in (MetaOp.P, MetaOp.G, MetaOp.E):
            violations.append((i, f"unknown op {int(op)}"))
    return violations
