"""Procedural dataset synthesis: random curves, scenes, and paired motions.

Four record families come out of here:

- trajectory: a straight-line source motion between the curve endpoints paired
  with a curve-following target and the curve's minimal template prompt;
- obstacle: same pairing, but the prompt is the spatial-constraint sentence of
  a generated obstacle scene;
- edit: a corpus motion paired with one of {speed-up, mirror, exaggerate} and
  the matching fixed instruction;
- reaction: an actor motion paired with its follower (1 m offset, 10-frame
  delay) and the fixed follow instruction.

Every record draws from its own np.random.Generator seeded with
[seed, index], so a dataset is a pure function of (counts, seed) and each
record is reproducible in isolation, in any execution order. Curve families
by difficulty level: 1 is straight lines, 2 is circular arcs, 3 picks
uniformly among quadratic Bezier, cubic Bezier, and sinusoid.

Curves are generated in canonical pose (start at the origin, chord or initial
tangent along +Z). Linear, Bezier, and sinusoid defining parameters land on
the 2-decimal grid the prompt templates print, so their prompts rebuild the
generating curve exactly; arcs keep exact radius/angle and quantize only at
serialization.

On disk a dataset is a directory: one binary motion file per sequence under
motions/, a records.jsonl index (one JSON object per line), and stats.json
with per-channel normalization statistics. Field names are documented in
docs/formats.md and pinned by tests.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .curves import (
    Arc,
    CubicBezier,
    Linear,
    ParamCurve,
    QuadBezier,
    Sinusoid,
    arc_length,
    canonical_arc,
    curve_end,
    curve_start,
)
from .errors import FormatError, PlacementFailed
from .gait import (
    EDIT_INSTRUCTIONS,
    MAX_FRAMES,
    REACTION_INSTRUCTION,
    SPEED_RANGE,
    exaggerate,
    follower_motion,
    mirror,
    require_corpus,
    synthesize_motion,
    time_warp,
)
from .motion import (
    FPS,
    MotionSequence,
    NormStats,
    compute_stats,
    load_motion,
    save_motion,
)
from .prompts import (
    curve_from_ast,
    parse_spatial,
    parse_trajectory,
    serialize_spatial,
    serialize_trajectory,
    trajectory_params,
)
from .scenes import Obstacle, ObstacleScene, place_obstacles

LENGTH_RANGE = (1.0, 8.0)  # m, every generated curve
ARC_RADIUS_RANGE = (2.0, 4.0)  # m
ARC_ANGLE_RANGE = (0.5 * math.pi, math.pi)  # rad
QUAD_RATIO_RANGE = (0.3, 0.6)  # |lateral offset| / chord
SINUSOID_AMPLITUDE_RANGE = (0.1, 0.8)  # m
SINUSOID_FREQUENCIES = (0.5, 1.0, 1.5, 2.0)  # cycles per unit parameter

TRAJECTORY_COUNTS = (200, 800, 1000)  # records per level
OBSTACLE_COUNTS = (100, 900, 1000)

EDIT_OPS = ("speedup", "mirror", "exaggerate")

# Curve rejection sampling has generous acceptance; scene resampling replaces
# the whole curve when obstacle placement fails, which is rare but possible
# on nearly-straight level-3 draws.
_MAX_CURVE_TRIES = 1000
_MAX_SCENE_TRIES = 50

RECORDS_FILE = "records.jsonl"
STATS_FILE = "stats.json"
MOTIONS_DIR = "motions"


def _grid(x: float) -> float:
    """Snap to the 2-decimal grid the prompt templates print. The +0.0
    normalizes -0.0 so stored and printed values agree."""
    return round(float(x), 2) + 0.0


def _grid_up(x: float) -> float:
    """Snap upward, for values with a hard lower bound (speeds)."""
    return math.ceil(float(x) * 100.0 - 1e-9) / 100.0 + 0.0


@dataclass
class DatasetRecord:
    """One training example: prompt, target motion, optional source motion.

    kind uses the task vocabulary ("traj_follow", "obstacle_avoid", "edit",
    "reaction"). curve and scene hold the generating geometry where it
    exists. seed is the (dataset seed, record index) pair that reproduces the
    record's private rng.
    """

    kind: str
    prompt: str
    target: MotionSequence
    source: MotionSequence | None = None
    curve: ParamCurve | None = None
    scene: ObstacleScene | None = None
    level: int = 0
    seed: tuple[int, int] = (0, 0)
    meta: dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if len(self.target) > MAX_FRAMES:
            raise ValueError(
                f"target has {len(self.target)} frames, cap is {MAX_FRAMES}"
            )
        self.seed = (int(self.seed[0]), int(self.seed[1]))


def _record_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


# --------------------------------------------------------------- curve draws


def _draw_linear(rng: np.random.Generator) -> Linear:
    length = _grid(rng.uniform(*LENGTH_RANGE))
    lo = max(SPEED_RANGE[0], length * FPS / MAX_FRAMES)
    speed = _grid_up(rng.uniform(lo, SPEED_RANGE[1]))
    return Linear((0.0, 0.0), (0.0, length), speed)


def _draw_arc(rng: np.random.Generator) -> Arc:
    for _ in range(_MAX_CURVE_TRIES):
        radius = float(rng.uniform(*ARC_RADIUS_RANGE))
        angle = float(rng.uniform(*ARC_ANGLE_RANGE))
        if radius * angle > LENGTH_RANGE[1]:
            continue
        direction = "ccw" if rng.random() < 0.5 else "cw"
        return canonical_arc(radius, angle, direction)
    raise RuntimeError("arc rejection sampling exhausted")  # pragma: no cover


def _draw_quad(rng: np.random.Generator) -> QuadBezier:
    # P1 sits on the +Z axis so the initial tangent is canonical; its height
    # is solved from the requested |offset|/chord ratio, then snapped to the
    # print grid and re-checked so the stored curve itself satisfies the
    # ratio constraint.
    for _ in range(_MAX_CURVE_TRIES):
        chord = float(rng.uniform(2.0, 6.0))
        phi = float(rng.uniform(0.35, 1.2))  # chord direction off +Z
        side = 1.0 if rng.random() < 0.5 else -1.0
        ratio = float(rng.uniform(*QUAD_RATIO_RANGE))
        p1z = _grid(ratio * chord / math.sin(phi))
        p2 = (_grid(side * chord * math.sin(phi)), _grid(chord * math.cos(phi)))
        if p1z <= 0.0:
            continue
        c = QuadBezier((0.0, 0.0), (0.0, p1z), p2)
        got = abs(float(trajectory_params(c, "full")["offset_ratio"]))
        if not (QUAD_RATIO_RANGE[0] <= got <= QUAD_RATIO_RANGE[1]):
            continue
        if not (LENGTH_RANGE[0] <= arc_length(c) <= LENGTH_RANGE[1]):
            continue
        return c
    raise RuntimeError("quad rejection sampling exhausted")  # pragma: no cover


def _draw_cubic(rng: np.random.Generator) -> CubicBezier:
    for _ in range(_MAX_CURVE_TRIES):
        p1z = _grid(rng.uniform(0.8, 2.0))
        psi = float(rng.uniform(-0.9, 0.9))
        chord = float(rng.uniform(2.5, 5.5))
        p3 = (_grid(chord * math.sin(psi)), _grid(chord * math.cos(psi)))
        p2 = (_grid(rng.uniform(-2.0, 2.0)), _grid(rng.uniform(1.0, 5.0)))
        if p1z <= 0.0:
            continue
        c = CubicBezier((0.0, 0.0), (0.0, p1z), p2, p3)
        if not (LENGTH_RANGE[0] <= arc_length(c) <= LENGTH_RANGE[1]):
            continue
        return c
    raise RuntimeError("cubic rejection sampling exhausted")  # pragma: no cover


def _draw_sinusoid(rng: np.random.Generator) -> Sinusoid:
    for _ in range(_MAX_CURVE_TRIES):
        chord = _grid(rng.uniform(2.0, 6.0))
        amplitude = _grid(rng.uniform(*SINUSOID_AMPLITUDE_RANGE))
        freq = float(SINUSOID_FREQUENCIES[rng.integers(len(SINUSOID_FREQUENCIES))])
        c = Sinusoid((0.0, 0.0), (0.0, chord), amplitude, freq)
        if not (LENGTH_RANGE[0] <= arc_length(c) <= LENGTH_RANGE[1]):
            continue
        return c
    raise RuntimeError("sinusoid rejection sampling exhausted")  # pragma: no cover


def random_curve(level: int, rng: np.random.Generator) -> ParamCurve:
    """Draw a canonical curve for a difficulty level.

    Level 1: straight line. Level 2: circular arc. Level 3: one of quadratic
    Bezier, cubic Bezier, sinusoid with equal probability. All draws satisfy
    the dataset constraints (length 1-8 m, arc radius >= 2 m and angle in
    [pi/2, pi], quad offset ratio in [0.3, 0.6]).
    """
    if level == 1:
        return _draw_linear(rng)
    if level == 2:
        return _draw_arc(rng)
    if level == 3:
        family = int(rng.integers(3))
        if family == 0:
            return _draw_quad(rng)
        if family == 1:
            return _draw_cubic(rng)
        return _draw_sinusoid(rng)
    raise ValueError(f"level must be 1, 2, or 3, got {level}")


# ------------------------------------------------------------ record builders


def _paired_motions(
    c: ParamCurve, rng: np.random.Generator
) -> tuple[MotionSequence, MotionSequence]:
    """Curve-following target plus a straight-line source between the curve's
    endpoints. A Linear curve reuses its own prompt speed for the target so
    prompt and motion agree; other families draw a speed."""
    if isinstance(c, Linear):
        target = synthesize_motion(c, speed=c.speed)
    else:
        target = synthesize_motion(c, rng=rng)
    line = Linear(curve_start(c), curve_end(c), 1.0)
    source = synthesize_motion(line, rng=rng)
    return target, source


def generate_trajectory_dataset(
    counts: tuple[int, int, int] = TRAJECTORY_COUNTS, seed: int = 0
) -> list[DatasetRecord]:
    """counts[k] records at level k+1, deterministic in (counts, seed)."""
    records: list[DatasetRecord] = []
    index = 0
    for level, count in zip((1, 2, 3), counts):
        if count < 0:
            raise ValueError("counts must be >= 0")
        for _ in range(count):
            rng = _record_rng(seed, index)
            c = random_curve(level, rng)
            target, source = _paired_motions(c, rng)
            records.append(
                DatasetRecord(
                    kind="traj_follow",
                    prompt=serialize_trajectory(c),
                    target=target,
                    source=source,
                    curve=c,
                    level=level,
                    seed=(seed, index),
                )
            )
            index += 1
    return records


def generate_obstacle_dataset(
    counts: tuple[int, int, int] = OBSTACLE_COUNTS, seed: int = 0
) -> list[DatasetRecord]:
    """Like the trajectory dataset, with obstacle scenes and spatial prompts.

    A curve whose obstacle placement fails is discarded and redrawn from the
    same record rng, so the dataset stays a pure function of (counts, seed).
    """
    records: list[DatasetRecord] = []
    index = 0
    for level, count in zip((1, 2, 3), counts):
        if count < 0:
            raise ValueError("counts must be >= 0")
        for _ in range(count):
            rng = _record_rng(seed, index)
            scene = None
            for _ in range(_MAX_SCENE_TRIES):
                c = random_curve(level, rng)
                try:
                    scene = place_obstacles(c, level, rng)
                except PlacementFailed:
                    continue
                break
            if scene is None:
                raise PlacementFailed(
                    f"no valid scene after {_MAX_SCENE_TRIES} curves "
                    f"(seed {seed}, record {index})"
                )
            target, source = _paired_motions(scene.curve, rng)
            records.append(
                DatasetRecord(
                    kind="obstacle_avoid",
                    prompt=serialize_spatial(scene),
                    target=target,
                    source=source,
                    curve=scene.curve,
                    scene=scene,
                    level=level,
                    seed=(seed, index),
                    meta={"curve_prompt": serialize_trajectory(scene.curve)},
                )
            )
            index += 1
    return records


def generate_edit_pairs(
    corpus: list[MotionSequence], seed: int = 0
) -> list[DatasetRecord]:
    """One edit record per corpus motion; the operation is drawn per record."""
    require_corpus(corpus)
    ops = {
        "speedup": time_warp,
        "mirror": mirror,
        "exaggerate": exaggerate,
    }
    records = []
    for index, source in enumerate(corpus):
        rng = _record_rng(seed, index)
        op = EDIT_OPS[int(rng.integers(len(EDIT_OPS)))]
        records.append(
            DatasetRecord(
                kind="edit",
                prompt=EDIT_INSTRUCTIONS[op],
                target=ops[op](source),
                source=source,
                seed=(seed, index),
                meta={"op": op},
            )
        )
    return records


def generate_reaction_pairs(
    corpus: list[MotionSequence], seed: int = 0
) -> list[DatasetRecord]:
    """One reaction record per corpus motion: actor source, follower target."""
    require_corpus(corpus)
    return [
        DatasetRecord(
            kind="reaction",
            prompt=REACTION_INSTRUCTION,
            target=follower_motion(actor),
            source=actor,
            seed=(seed, index),
        )
        for index, actor in enumerate(corpus)
    ]


# -------------------------------------------------------------------- file IO


def _motion_name(index: int, role: str) -> str:
    return f"{MOTIONS_DIR}/{index:05d}.{role}.umo"


def write_dataset(records: list[DatasetRecord], out_dir: str) -> NormStats:
    """Lay a dataset out on disk and return its normalization statistics.

    out_dir/records.jsonl holds one object per record with keys index, kind,
    level, prompt, seed, meta, target_file, source_file; motion files live
    under out_dir/motions/; stats.json holds per-channel mean/std over every
    frame of every motion (targets and sources). Deterministic input gives a
    byte-identical tree.
    """
    if not records:
        raise ValueError("refusing to write an empty dataset")
    os.makedirs(os.path.join(out_dir, MOTIONS_DIR), exist_ok=True)
    corpus: list[MotionSequence] = []
    with open(os.path.join(out_dir, RECORDS_FILE), "w") as idx:
        for i, rec in enumerate(records):
            target_file = _motion_name(i, "target")
            save_motion(os.path.join(out_dir, target_file), rec.target)
            corpus.append(rec.target)
            source_file = None
            if rec.source is not None:
                source_file = _motion_name(i, "source")
                save_motion(os.path.join(out_dir, source_file), rec.source)
                corpus.append(rec.source)
            meta = dict(rec.meta)
            if rec.curve is not None and "curve_prompt" not in meta:
                meta["curve_prompt"] = serialize_trajectory(rec.curve)
            row = {
                "index": i,
                "kind": rec.kind,
                "level": rec.level,
                "prompt": rec.prompt,
                "seed": list(rec.seed),
                "meta": meta,
                "target_file": target_file,
                "source_file": source_file,
            }
            idx.write(json.dumps(row, sort_keys=True) + "\n")
    stats = compute_stats(corpus)
    stats.save(os.path.join(out_dir, STATS_FILE))
    return stats


def _scene_from_row(prompt: str, curve: ParamCurve, level: int) -> ObstacleScene:
    ast = parse_spatial(prompt)
    return ObstacleScene(
        curve=curve,
        obstacles=[Obstacle((x, z), r) for (x, z, r) in ast.obstacles],
        start=ast.start,
        goal=ast.goal,
        level=level,
    )


def load_dataset(dataset_dir: str) -> tuple[list[DatasetRecord], NormStats]:
    """Read back a directory written by write_dataset.

    Curves and scenes are rebuilt from their prompt strings, so geometry
    carries the documented 2-decimal quantization (exact for grid-aligned
    families). Motion data reflects the 32-bit file storage.
    """
    index_path = os.path.join(dataset_dir, RECORDS_FILE)
    records: list[DatasetRecord] = []
    with open(index_path) as f:
        for line_no, line in enumerate(f):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as err:
                raise FormatError(f"bad index line {line_no}: {err}") from err
            target = load_motion(os.path.join(dataset_dir, row["target_file"]))
            source = None
            if row["source_file"] is not None:
                source = load_motion(os.path.join(dataset_dir, row["source_file"]))
            meta = dict(row["meta"])
            curve = None
            if "curve_prompt" in meta:
                curve = curve_from_ast(parse_trajectory(meta["curve_prompt"]))
            scene = None
            if row["kind"] == "obstacle_avoid":
                if curve is None:
                    raise FormatError(f"obstacle record {line_no} lacks a curve")
                scene = _scene_from_row(row["prompt"], curve, int(row["level"]))
            records.append(
                DatasetRecord(
                    kind=row["kind"],
                    prompt=row["prompt"],
                    target=target,
                    source=source,
                    curve=curve,
                    scene=scene,
                    level=int(row["level"]),
                    seed=tuple(row["seed"]),
                    meta=meta,
                )
            )
    stats = NormStats.load(os.path.join(dataset_dir, STATS_FILE))
    return records, stats
