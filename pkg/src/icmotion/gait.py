"""Procedural walking synthesis and the motion-to-motion edit operations.

The gait generator drives the pelvis exactly along a ground-plane curve
(arc-length uniform in time), points the root yaw down the tangent, and
swings the limbs with sinusoids phase-locked to distance traveled. It is
deliberately simple: deterministic, closed-form, and cheap to verify.
"""

from __future__ import annotations

import math

import numpy as np

from .curves import ParamCurve, arc_length, param_at_arclength
from .errors import EmptyCorpus, ShapeMismatch, TooLong
from .motion import (
    FPS,
    JOINT_POS,
    JOINT_ROTS,
    MIRROR_PAIRS,
    NUM_JOINTS,
    ROOT_ORIENT,
    SKELETON,
    TRANS,
    MotionSequence,
    matrix_to_rot6d,
    rot6d_to_matrix,
    yaw_matrix,
)

MAX_FRAMES = 190
SPEED_RANGE = (1.0, 1.6)  # m/s
STRIDE_M = 1.2  # one full gait cycle per 1.2 m traveled
PELVIS_HEIGHT = 0.95
BOB_AMPLITUDE = 0.015

# Sagittal (about-X) swing amplitude and phase offset per non-root joint.
# Left/right limbs run in antiphase; arms counter-swing their legs.
_SWING: dict[str, tuple[float, float]] = {
    "left_hip": (0.50, 0.0),
    "right_hip": (0.50, math.pi),
    "left_knee": (0.60, -0.5 * math.pi),
    "right_knee": (0.60, 0.5 * math.pi),
    "left_ankle": (0.20, math.pi),
    "right_ankle": (0.20, 0.0),
    "left_foot": (0.10, 0.5 * math.pi),
    "right_foot": (0.10, -0.5 * math.pi),
    "spine1": (0.03, 0.0),
    "spine2": (0.03, math.pi),
    "spine3": (0.03, 0.0),
    "neck": (0.02, math.pi),
    "head": (0.02, 0.0),
    "left_collar": (0.02, math.pi),
    "right_collar": (0.02, 0.0),
    "left_shoulder": (0.25, math.pi),
    "right_shoulder": (0.25, 0.0),
    "left_elbow": (0.30, math.pi * 0.5),
    "right_elbow": (0.30, -math.pi * 0.5),
    "left_wrist": (0.10, 0.0),
    "right_wrist": (0.10, math.pi),
}


def _rot_x(angle: np.ndarray) -> np.ndarray:
    """Batched rotation about local X: (T,) -> (T, 3, 3)."""
    c, s = np.cos(angle), np.sin(angle)
    zero, one = np.zeros_like(c), np.ones_like(c)
    return np.stack(
        [
            np.stack([one, zero, zero], axis=-1),
            np.stack([zero, c, -s], axis=-1),
            np.stack([zero, s, c], axis=-1),
        ],
        axis=-2,
    )


def _forward_kinematics(local_rots: np.ndarray) -> np.ndarray:
    """Root-local joint positions from per-joint local rotations.

    local_rots: (T, 22, 3, 3), root entry ignored (root frame is identity
    here: translation and yaw live in their own channels). Returns (T, 22, 3).
    """
    n = local_rots.shape[0]
    global_rots = np.empty_like(local_rots)
    positions = np.zeros((n, NUM_JOINTS, 3))
    global_rots[:, 0] = np.eye(3)
    for j in range(1, NUM_JOINTS):
        parent = SKELETON.parents[j]
        offset = SKELETON.rest_offsets[j]
        positions[:, j] = positions[:, parent] + np.einsum(
            "tij,j->ti", global_rots[:, parent], offset
        )
        global_rots[:, j] = global_rots[:, parent] @ local_rots[:, j]
    return positions


def frame_count(length_m: float, speed: float, fps: int = FPS) -> int:
    """T = round(L / v * fps), minimum 2 so endpoints exist."""
    return max(2, round(length_m / speed * fps))


def synthesize_motion(
    c: ParamCurve,
    fps: int = FPS,
    rng: np.random.Generator | None = None,
    speed: float | None = None,
) -> MotionSequence:
    """Walk along a canonical curve; frame i sits at arc-length fraction i/(T-1).

    speed defaults to a uniform draw from SPEED_RANGE, floored so T <= 190
    holds for any in-range curve length. An explicit speed that would need
    more than 190 frames raises TooLong.
    """
    length = arc_length(c)
    if speed is None:
        if rng is None:
            raise ValueError("need an rng when speed is not given")
        lo = max(SPEED_RANGE[0], length * fps / MAX_FRAMES)
        speed = float(rng.uniform(lo, max(SPEED_RANGE[1], lo)))
    n_frames = frame_count(length, speed, fps)
    if n_frames > MAX_FRAMES:
        raise TooLong(f"{n_frames} frames exceeds the {MAX_FRAMES}-frame cap")

    s = np.linspace(0.0, length, n_frames)
    t = param_at_arclength(c, s)
    xz = np.asarray(c.point(t), dtype=np.float64)
    vel = np.asarray(c.velocity(t), dtype=np.float64)
    heading = vel / np.linalg.norm(vel, axis=-1, keepdims=True)
    yaw = np.arctan2(heading[:, 0], heading[:, 1])  # 0 faces +Z

    phase = 2.0 * math.pi * s / STRIDE_M
    data = np.zeros((n_frames, 201))
    data[:, 0] = xz[:, 0]
    data[:, 1] = PELVIS_HEIGHT + BOB_AMPLITUDE * np.sin(2.0 * phase)
    data[:, 2] = xz[:, 1]
    data[:, ROOT_ORIENT] = matrix_to_rot6d(yaw_matrix(yaw))

    local_rots = np.broadcast_to(np.eye(3), (n_frames, NUM_JOINTS, 3, 3)).copy()
    for j, name in enumerate(SKELETON.joint_names):
        if j == 0:
            continue
        amp, off = _SWING[name]
        local_rots[:, j] = _rot_x(amp * np.sin(phase + off))
    data[:, JOINT_ROTS] = matrix_to_rot6d(local_rots[:, 1:]).reshape(n_frames, -1)
    data[:, JOINT_POS] = _forward_kinematics(local_rots).reshape(n_frames, -1)
    return MotionSequence(data, fps)


# ------------------------------------------------------------- edit operations

SPEED_WARP_FACTOR = 1.5
EXAGGERATE_GAMMA = 1.3

EDIT_INSTRUCTIONS = {
    "speedup": "Speed up your motion.",
    "mirror": "Mirror your motion.",
    "exaggerate": "Exaggerate your motion.",
}
REACTION_INSTRUCTION = "Follow your partner at one meter."


def time_warp(seq: MotionSequence, factor: float = SPEED_WARP_FACTOR) -> MotionSequence:
    """Speed a motion up by `factor`: T -> round(T/factor), same path geometry.

    Channels are linearly interpolated at the resampled frame times; the
    redundant rotation channels stay decodable because interpolation between
    nearby 6D frames remains non-degenerate.
    """
    n = len(seq)
    if n < 2:
        raise ShapeMismatch("need at least 2 frames to warp")
    new_n = max(2, round(n / factor))
    src_idx = np.linspace(0.0, n - 1.0, new_n)
    lo = np.floor(src_idx).astype(int)
    hi = np.minimum(lo + 1, n - 1)
    w = (src_idx - lo)[:, None]
    data = (1.0 - w) * seq.data[lo] + w * seq.data[hi]
    return MotionSequence(data, seq.fps)


def _mirror_rot6d(r6: np.ndarray) -> np.ndarray:
    """Conjugate a 6D rotation by the X-flip: columns map as
    (ax,ay,az, bx,by,bz) -> (ax,-ay,-az, -bx,by,bz)."""
    out = r6.copy()
    out[..., 1] *= -1.0
    out[..., 2] *= -1.0
    out[..., 3] *= -1.0
    return out


def mirror(seq: MotionSequence) -> MotionSequence:
    """Left-right mirror (an involution): flip X, swap left/right joints."""
    data = seq.data.copy()
    data[:, 0] *= -1.0  # root translation x
    data[:, ROOT_ORIENT] = _mirror_rot6d(data[:, ROOT_ORIENT])
    rots = data[:, JOINT_ROTS].reshape(len(seq), NUM_JOINTS - 1, 6)
    rots = _mirror_rot6d(rots)
    pos = data[:, JOINT_POS].reshape(len(seq), NUM_JOINTS, 3)
    pos = pos.copy()
    pos[..., 0] *= -1.0
    for left, right in MIRROR_PAIRS:
        rots[:, [left - 1, right - 1]] = rots[:, [right - 1, left - 1]]
        pos[:, [left, right]] = pos[:, [right, left]]
    data[:, JOINT_ROTS] = rots.reshape(len(seq), -1)
    data[:, JOINT_POS] = pos.reshape(len(seq), -1)
    return MotionSequence(data, seq.fps)


def exaggerate(seq: MotionSequence, gamma: float = EXAGGERATE_GAMMA) -> MotionSequence:
    """Scale pose oscillation about its temporal mean; path is untouched."""
    data = seq.data.copy()
    pose = data[:, 3:]
    mean = pose.mean(axis=0, keepdims=True)
    data[:, 3:] = mean + gamma * (pose - mean)
    return MotionSequence(data, seq.fps)


REACTION_DELAY_FRAMES = 10
REACTION_OFFSET_XZ = (1.0, 0.0)  # world +X, exactly 1 m


def follower_motion(actor: MotionSequence, delay: int = REACTION_DELAY_FRAMES) -> MotionSequence:
    """Reaction partner: the actor's motion delayed and shifted 1 m sideways.

    Frame i copies actor frame max(i - delay, 0) with the root translation
    offset by REACTION_OFFSET_XZ, so the per-frame pelvis distance to the
    delayed actor is exactly 1 m.
    """
    idx = np.maximum(np.arange(len(actor)) - delay, 0)
    data = actor.data[idx].copy()
    data[:, 0] += REACTION_OFFSET_XZ[0]
    data[:, 2] += REACTION_OFFSET_XZ[1]
    return MotionSequence(data, actor.fps)


def require_corpus(corpus: list) -> None:
    if not corpus:
        raise EmptyCorpus("need at least one motion")
