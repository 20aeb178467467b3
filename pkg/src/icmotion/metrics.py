"""Deterministic evaluation: the MPJPE family, time-matched trajectory
error, strict obstacle success rate, and the per-architecture overhead
report (parameter and FLOP deltas asserted, latency reported only).

Conventions frozen here: joint error reads the 22 explicit position
channels (no kinematics pass); trajectory correspondence matches frame i to
the curve point at arc-length fraction i/(T-1); a run collides when a frame's
pelvis lies strictly inside a safety radius, so dist == r still succeeds.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .accounting import count_flops, count_params, measure_latency
from .curves import ParamCurve, arc_length, param_at_arclength
from .errors import NoPreservedFrames, OrderingViolated, ShapeMismatch
from .model import CondArch, ModelConfig
from .motion import JOINT_POS, NUM_JOINTS, MotionSequence
from .tasks import FramePlan, MetaOp

M_TO_CM = 100.0


def _frames(motion) -> np.ndarray:
    data = motion.data if isinstance(motion, MotionSequence) else np.asarray(motion)
    return np.asarray(data, dtype=np.float64)


def _joint_positions(data: np.ndarray) -> np.ndarray:
    return data[:, JOINT_POS].reshape(data.shape[0], NUM_JOINTS, 3)


def mpjpe(pred, gt) -> float:
    """Mean per-joint position error in centimeters."""
    a, b = _frames(pred), _frames(gt)
    if a.shape != b.shape:
        raise ShapeMismatch(f"motion shapes differ: {a.shape} vs {b.shape}")
    dist = np.linalg.norm(_joint_positions(a) - _joint_positions(b), axis=2)
    return float(dist.mean() * M_TO_CM)


def p_mpjpe(pred, plan: FramePlan, source) -> float:
    """MPJPE restricted to the plan's preserved frames, against the source."""
    a, b = _frames(pred), _frames(source)
    if a.shape != b.shape or a.shape[0] != len(plan):
        raise ShapeMismatch("pred, source, and plan must share the frame count")
    keep = np.flatnonzero(plan.ops == int(MetaOp.P))
    if keep.size == 0:
        raise NoPreservedFrames("plan has no preserved frames")
    dist = np.linalg.norm(
        _joint_positions(a[keep]) - _joint_positions(b[keep]), axis=2
    )
    return float(dist.mean() * M_TO_CM)


def traj_error(pred, curve: ParamCurve) -> float:
    """Mean planar pelvis-to-curve distance in cm, frame i matched to the
    curve point at arc-length fraction i/(T-1)."""
    data = _frames(pred)
    if data.shape[0] < 1:
        raise ShapeMismatch("need at least one frame")
    T = data.shape[0]
    length = arc_length(curve)
    fractions = np.zeros(1) if T == 1 else np.arange(T) / (T - 1.0)
    t = param_at_arclength(curve, fractions * length)
    target = np.asarray(curve.point(t), dtype=np.float64)
    xz = data[:, [0, 2]]
    return float(np.mean(np.linalg.norm(xz - target, axis=1)) * M_TO_CM)


def collides(pred, scene) -> bool:
    """True when any frame's pelvis XZ lies strictly inside any obstacle."""
    xz = _frames(pred)[:, [0, 2]]
    for ob in scene.obstacles:
        d = np.linalg.norm(xz - np.asarray(ob.center)[None, :], axis=1)
        if np.any(d < ob.safety_radius):
            return True
    return False


def success_rate(preds, scenes) -> float:
    """Fraction of runs that never enter a safety radius (dist == r passes)."""
    if len(preds) != len(scenes):
        raise ShapeMismatch("one scene per prediction required")
    if not preds:
        raise ValueError("no runs to score")
    ok = sum(0 if collides(p, s) else 1 for p, s in zip(preds, scenes))
    return ok / len(preds)


# ------------------------------------------------------------------- reports


@dataclass
class EvalReport:
    """Per-task metric rows plus optional per-architecture overhead rows.

    Values must be finite and non-negative, and any success entry must be a
    fraction.
    """

    tasks: dict[str, dict[str, float]]
    archs: dict[str, dict[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        for section in (self.tasks, self.archs):
            for row, cells in section.items():
                for key, value in cells.items():
                    v = float(value)
                    if not np.isfinite(v) or v < 0:
                        raise ValueError(f"{row}/{key} must be finite and non-negative")
                    if key == "success" and v > 1.0:
                        raise ValueError(f"{row}/success must be a fraction")

    def to_csv(self) -> str:
        lines = ["section,row,metric,value"]
        for name, section in (("task", self.tasks), ("arch", self.archs)):
            for row in sorted(section):
                for key in sorted(section[row]):
                    lines.append(f"{name},{row},{key},{section[row][key]}")
        return "\n".join(lines) + "\n"

    def format_table(self) -> str:
        lines = []
        for title, section in (("tasks", self.tasks), ("architectures", self.archs)):
            if not section:
                continue
            lines.append(f"[{title}]")
            for row in sorted(section):
                cells = "  ".join(
                    f"{k}={section[row][k]:.4g}" for k in sorted(section[row])
                )
                lines.append(f"  {row:<16} {cells}")
        return "\n".join(lines) + "\n"


@dataclass
class OverheadRow:
    arch: str
    delta_params: int
    delta_flops: int
    delta_latency: float | None = None


_ARCH_ORDER = (
    CondArch.TEMPORAL_FUSION,
    CondArch.SEQ_CONCAT,
    CondArch.ADALN,
    CondArch.CONTROLNET,
)


def overhead_report(
    cfg: ModelConfig,
    T: int,
    steps: int = 50,
    text_len: int = 64,
    latency_repeats: int = 0,
    seed: int = 0,
) -> list[OverheadRow]:
    """Context-conditioning cost per architecture over the shared base dims.

    Asserts the two cost orderings (parameters: fusion = concat < adaln <
    controlnet; FLOPs per guided run: fusion < adaln < controlnet < concat)
    and raises OrderingViolated naming the offending config otherwise.
    Latency, when requested, is measured but never asserted.
    """
    rows = []
    for arch in _ARCH_ORDER:
        arch_cfg = replace(cfg, cond_arch=arch)
        dp = count_params(arch_cfg)["delta"]
        df = count_flops(arch_cfg, T, steps=steps, text_len=text_len)["delta"]
        dl = None
        if latency_repeats > 0:
            dl = measure_latency(
                arch_cfg, T, steps=steps, repeats=latency_repeats, seed=seed
            )["delta"]
        rows.append(OverheadRow(arch.value, dp, df, dl))

    tf, sc, ad, cn = rows
    where = f"(hidden={cfg.hidden_dim}, layers={cfg.n_layers}, T={T}, text_len={text_len})"
    if not (tf.delta_params == sc.delta_params < ad.delta_params < cn.delta_params):
        raise OrderingViolated(
            "parameter overhead ordering broken "
            f"{where}: {[r.delta_params for r in rows]}"
        )
    if not (tf.delta_flops < ad.delta_flops < cn.delta_flops < sc.delta_flops):
        raise OrderingViolated(
            f"flop overhead ordering broken {where}: {[r.delta_flops for r in rows]}"
        )
    return rows


def overhead_csv(rows: list[OverheadRow]) -> str:
    lines = ["arch,delta_params,delta_flops,delta_latency_s"]
    for r in rows:
        dl = "" if r.delta_latency is None else f"{r.delta_latency:.6f}"
        lines.append(f"{r.arch},{r.delta_params},{r.delta_flops},{dl}")
    return "\n".join(lines) + "\n"


def format_overhead_table(rows: list[OverheadRow]) -> str:
    lines = [f"{'arch':<18} {'d_params':>12} {'d_flops':>16} {'d_latency_s':>12}"]
    for r in rows:
        dl = "-" if r.delta_latency is None else f"{r.delta_latency:.4f}"
        lines.append(f"{r.arch:<18} {r.delta_params:>12} {r.delta_flops:>16} {dl:>12}")
    return "\n".join(lines) + "\n"
