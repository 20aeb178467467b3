"""Motion frames, the 6D rotation codec, normalization stats, and file I/O.

Frame layout (201 channels, frozen; see docs/formats.md):

    [  0:  3]  root translation, meters, world frame
    [  3:  9]  root orientation, 6D rotation (first two matrix columns)
    [  9:135]  21 joint rotations x 6D, skeleton order minus the root
    [135:201]  22 joint positions x 3, meters, local to the root frame
               (translation and yaw removed)

Rotations and positions are stored redundantly and are NOT forced to be
mutually consistent; consumers pick the channels they trust.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateRotation,
    EmptyCorpus,
    FormatError,
    NonFinite,
    NotARotation,
    ShapeMismatch,
)

FPS = 30
FRAME_DIM = 201
NUM_JOINTS = 22

TRANS = slice(0, 3)
ROOT_ORIENT = slice(3, 9)
JOINT_ROTS = slice(9, 135)
JOINT_POS = slice(135, 201)

MOTION_MAGIC = b"UMOM"
MOTION_VERSION = 1

_EPS = 1e-8
_ORTHO_TOL = 1e-5


# ----------------------------------------------------------- 6D rotation codec


def rot6d_to_matrix(r6: np.ndarray) -> np.ndarray:
    """Gram-Schmidt a (..., 6) array of 6D rotations into (..., 3, 3) matrices.

    The 6 values are the first two columns (a, b) of the target matrix.
    c1 = a/|a|, c2 = normalize(b - (b.c1)c1), c3 = c1 x c2. Scale-invariant in
    both inputs by construction.
    """
    r6 = np.asarray(r6, dtype=np.float64)
    if r6.shape[-1] != 6:
        raise ShapeMismatch(f"expected trailing dim 6, got {r6.shape}")
    a, b = r6[..., :3], r6[..., 3:]
    na = np.linalg.norm(a, axis=-1, keepdims=True)
    if np.any(na < _EPS):
        raise DegenerateRotation("first 6D column has near-zero norm")
    c1 = a / na
    proj = np.sum(b * c1, axis=-1, keepdims=True)
    b_orth = b - proj * c1
    nb = np.linalg.norm(b_orth, axis=-1, keepdims=True)
    if np.any(nb < _EPS):
        raise DegenerateRotation("6D columns are parallel")
    c2 = b_orth / nb
    c3 = np.cross(c1, c2)
    return np.stack([c1, c2, c3], axis=-1)


def matrix_to_rot6d(mat: np.ndarray) -> np.ndarray:
    """Drop the third column of proper rotation matrices: (..., 3, 3) -> (..., 6)."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape[-2:] != (3, 3):
        raise ShapeMismatch(f"expected trailing (3, 3), got {mat.shape}")
    eye = np.eye(3)
    gram = mat @ np.swapaxes(mat, -1, -2)
    if np.any(np.abs(gram - eye) > _ORTHO_TOL):
        raise NotARotation("matrix is not orthonormal")
    if np.any(np.linalg.det(mat) < 0.0):
        raise NotARotation("matrix has negative determinant")
    return np.concatenate([mat[..., :, 0], mat[..., :, 1]], axis=-1)


def yaw_matrix(angle: float | np.ndarray) -> np.ndarray:
    """Rotation about world Y; angle 0 faces +Z, positive turns +Z toward +X."""
    angle = np.asarray(angle, dtype=np.float64)
    c, s = np.cos(angle), np.sin(angle)
    zero, one = np.zeros_like(c), np.ones_like(c)
    rows = np.stack(
        [
            np.stack([c, zero, s], axis=-1),
            np.stack([zero, one, zero], axis=-1),
            np.stack([-s, zero, c], axis=-1),
        ],
        axis=-2,
    )
    return rows


# ------------------------------------------------------------------- skeleton


@dataclass(frozen=True)
class Skeleton:
    """Fixed 22-joint body: names, parent indices, rest offsets (meters)."""

    joint_names: tuple[str, ...]
    parents: tuple[int, ...]
    rest_offsets: np.ndarray  # (22, 3), offset from parent joint

    def __post_init__(self):
        assert len(self.joint_names) == NUM_JOINTS
        assert len(self.parents) == NUM_JOINTS
        assert self.rest_offsets.shape == (NUM_JOINTS, 3)


_JOINT_NAMES = (
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
)

_PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19)

# Hand-authored human proportions; +X is the body's left, +Y up, +Z forward.
_REST_OFFSETS = np.array(
    [
        [0.00, 0.00, 0.00],
        [0.09, -0.08, 0.00],
        [-0.09, -0.08, 0.00],
        [0.00, 0.11, 0.00],
        [0.00, -0.40, 0.00],
        [0.00, -0.40, 0.00],
        [0.00, 0.13, 0.00],
        [0.00, -0.42, 0.00],
        [0.00, -0.42, 0.00],
        [0.00, 0.14, 0.00],
        [0.00, -0.06, 0.13],
        [0.00, -0.06, 0.13],
        [0.00, 0.21, 0.00],
        [0.08, 0.17, 0.00],
        [-0.08, 0.17, 0.00],
        [0.00, 0.09, 0.00],
        [0.10, 0.02, 0.00],
        [-0.10, 0.02, 0.00],
        [0.26, 0.00, 0.00],
        [-0.26, 0.00, 0.00],
        [0.25, 0.00, 0.00],
        [-0.25, 0.00, 0.00],
    ]
)

SKELETON = Skeleton(_JOINT_NAMES, _PARENTS, _REST_OFFSETS)

# (left, right) joint index pairs, used by the mirror edit.
MIRROR_PAIRS = ((1, 2), (4, 5), (7, 8), (10, 11), (13, 14), (16, 17), (18, 19), (20, 21))


# ------------------------------------------------------------ frame packing


def pack_frame(
    root_translation: np.ndarray,
    root_orient: np.ndarray,
    joint_rots: np.ndarray,
    joint_pos: np.ndarray,
) -> np.ndarray:
    """Assemble one 201-vector from its four blocks.

    joint_rots is (21, 6) in skeleton order minus the root; joint_pos is (22, 3).
    """
    root_translation = np.asarray(root_translation, dtype=np.float64).reshape(3)
    root_orient = np.asarray(root_orient, dtype=np.float64).reshape(6)
    joint_rots = np.asarray(joint_rots, dtype=np.float64)
    joint_pos = np.asarray(joint_pos, dtype=np.float64)
    if joint_rots.shape != (NUM_JOINTS - 1, 6):
        raise ShapeMismatch(f"joint_rots must be (21, 6), got {joint_rots.shape}")
    if joint_pos.shape != (NUM_JOINTS, 3):
        raise ShapeMismatch(f"joint_pos must be (22, 3), got {joint_pos.shape}")
    return np.concatenate(
        [root_translation, root_orient, joint_rots.reshape(-1), joint_pos.reshape(-1)]
    )


def unpack_frame(frame: np.ndarray) -> dict[str, np.ndarray]:
    """Split one 201-vector back into its named blocks (inverse of pack_frame)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (FRAME_DIM,):
        raise ShapeMismatch(f"frame must be ({FRAME_DIM},), got {frame.shape}")
    return {
        "root_translation": frame[TRANS].copy(),
        "root_orient": frame[ROOT_ORIENT].copy(),
        "joint_rots": frame[JOINT_ROTS].reshape(NUM_JOINTS - 1, 6).copy(),
        "joint_pos": frame[JOINT_POS].reshape(NUM_JOINTS, 3).copy(),
    }


# ------------------------------------------------------------ motion sequence


@dataclass
class MotionSequence:
    """A (T, 201) float array of motion frames plus its frame rate."""

    data: np.ndarray
    fps: int = FPS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.shape[1] != FRAME_DIM:
            raise ShapeMismatch(f"motion data must be (T, {FRAME_DIM}), got {self.data.shape}")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def root_translation(self) -> np.ndarray:
        return self.data[:, TRANS]

    @property
    def root_orient(self) -> np.ndarray:
        return self.data[:, ROOT_ORIENT]

    @property
    def joint_rots(self) -> np.ndarray:
        return self.data[:, JOINT_ROTS].reshape(len(self), NUM_JOINTS - 1, 6)

    @property
    def joint_pos(self) -> np.ndarray:
        return self.data[:, JOINT_POS].reshape(len(self), NUM_JOINTS, 3)

    @property
    def pelvis_xz(self) -> np.ndarray:
        return self.data[:, [0, 2]]

    def copy(self) -> "MotionSequence":
        return MotionSequence(self.data.copy(), self.fps)


# -------------------------------------------------------------- normalization


@dataclass
class NormStats:
    """Per-channel mean and standard deviation over a corpus of frames."""

    mean: np.ndarray  # (201,)
    std: np.ndarray  # (201,), clamped away from zero

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(FRAME_DIM)
        self.std = np.asarray(self.std, dtype=np.float64).reshape(FRAME_DIM)

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump({"mean": self.mean.tolist(), "std": self.std.tolist()}, f)

    @classmethod
    def load(cls, path) -> "NormStats":
        with open(path) as f:
            blob = json.load(f)
        return cls(np.array(blob["mean"]), np.array(blob["std"]))


STD_CLAMP = 1e-6


def compute_stats(corpus: list[MotionSequence]) -> NormStats:
    """Population mean/std over every frame of every sequence.

    Channels with std below STD_CLAMP (constant channels) get std set to 1.0 so
    normalization leaves them centered but unscaled.
    """
    frames = [seq.data for seq in corpus if len(seq) > 0]
    if not frames:
        raise EmptyCorpus("no frames to compute stats over")
    stacked = np.concatenate(frames, axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)  # ddof=0, population
    std = np.where(std < STD_CLAMP, 1.0, std)
    return NormStats(mean, std)


def normalize(seq: MotionSequence, stats: NormStats) -> MotionSequence:
    return MotionSequence((seq.data - stats.mean) / stats.std, seq.fps)


def denormalize(seq: MotionSequence, stats: NormStats) -> MotionSequence:
    return MotionSequence(seq.data * stats.std + stats.mean, seq.fps)


# -------------------------------------------------------------------- file IO


def save_motion(path, seq: MotionSequence) -> None:
    """Write the little-endian binary motion format (see docs/formats.md)."""
    data = np.ascontiguousarray(seq.data, dtype="<f4")
    if not np.isfinite(data).all():
        raise NonFinite("refusing to write non-finite motion data")
    with open(path, "wb") as f:
        f.write(MOTION_MAGIC)
        f.write(struct.pack("<III", MOTION_VERSION, len(seq), seq.fps))
        f.write(data.tobytes())


def load_motion(path) -> MotionSequence:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MOTION_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}")
    if len(blob) < 16:
        raise FormatError("truncated header")
    version, n_frames, fps = struct.unpack("<III", blob[4:16])
    if version != MOTION_VERSION:
        raise FormatError(f"unsupported version {version}")
    expected = 16 + n_frames * FRAME_DIM * 4
    if len(blob) != expected:
        raise FormatError(f"expected {expected} bytes, got {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=16).reshape(n_frames, FRAME_DIM)
    return MotionSequence(data.astype(np.float64), fps)
