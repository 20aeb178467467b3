"""Metric contracts: MPJPE and its preserved-frame restriction against
loop-based oracles, trajectory error against a dense polyline table, the
strict collision rule, and the overhead report's asserted orderings.
"""

import numpy as np
import pytest
import torch

from icmotion.accounting import count_flops, count_params
from icmotion.curves import Arc, CubicBezier, Linear, Sinusoid, arc_from_endpoints
from icmotion.errors import NoPreservedFrames, OrderingViolated, ShapeMismatch
from icmotion.flow import SamplerConfig, inversion_inpaint
from icmotion.gait import synthesize_motion
from icmotion.metrics import (
    EvalReport,
    collides,
    format_overhead_table,
    mpjpe,
    overhead_csv,
    overhead_report,
    p_mpjpe,
    success_rate,
    traj_error,
)
from icmotion.model import CondArch, ModelConfig, MotionDenoiser
from icmotion.motion import FRAME_DIM, JOINT_POS, NUM_JOINTS, MotionSequence
from icmotion.scenes import Obstacle, ObstacleScene
from icmotion.tasks import FramePlan, MetaOp

MICRO = dict(
    hidden_dim=16,
    n_layers=2,
    n_heads=2,
    ffn_mult=2,
    max_T=16,
    text_layers=1,
    text_dim=16,
    max_text_tokens=16,
)


def random_motion(T, seed):
    rng = np.random.default_rng(seed)
    return MotionSequence(rng.normal(size=(T, FRAME_DIM)))


# --------------------------------------------------------------------- mpjpe


def test_mpjpe_identical_is_zero():
    m = random_motion(10, 0)
    assert mpjpe(m, m) == 0.0


def test_mpjpe_uniform_centimeter_offset():
    m = random_motion(8, 1)
    shifted = m.data.copy()
    shifted[:, JOINT_POS] = (
        shifted[:, JOINT_POS].reshape(8, NUM_JOINTS, 3) + np.array([0.01, 0.0, 0.0])
    ).reshape(8, -1)
    assert mpjpe(MotionSequence(shifted), m) == pytest.approx(1.0, abs=1e-12)


def test_mpjpe_triple_loop_oracle():
    a, b = random_motion(12, 2), random_motion(12, 3)
    pa = a.data[:, JOINT_POS].reshape(12, NUM_JOINTS, 3)
    pb = b.data[:, JOINT_POS].reshape(12, NUM_JOINTS, 3)
    total = 0.0
    for t in range(12):
        for j in range(NUM_JOINTS):
            acc = 0.0
            for axis in range(3):
                acc += (pa[t, j, axis] - pb[t, j, axis]) ** 2
            total += acc**0.5
    want = total / (12 * NUM_JOINTS) * 100.0
    assert mpjpe(a, b) == pytest.approx(want, abs=1e-9)


def test_mpjpe_symmetry_and_shape_check():
    a, b = random_motion(6, 4), random_motion(6, 5)
    assert mpjpe(a, b) == mpjpe(b, a)
    with pytest.raises(ShapeMismatch):
        mpjpe(a, random_motion(7, 6))


# ------------------------------------------------------------------- p_mpjpe


def _plan_with_ops(source, ops):
    return FramePlan(sources=source.data, ops=np.asarray(ops, dtype=np.int64))


def test_p_mpjpe_total_restriction_equals_mpjpe():
    T = 9
    pred, source = random_motion(T, 7), random_motion(T, 8)
    plan = _plan_with_ops(source, [MetaOp.P] * T)
    assert p_mpjpe(pred, plan, source) == pytest.approx(mpjpe(pred, source), abs=1e-12)


def test_p_mpjpe_masked_recomputation_oracle():
    T = 14
    rng = np.random.default_rng(9)
    pred, source = random_motion(T, 10), random_motion(T, 11)
    ops = rng.integers(0, 3, size=T)
    ops[[0, 5]] = int(MetaOp.P)  # at least one preserved frame
    plan = _plan_with_ops(source, ops)

    keep = [i for i in range(T) if ops[i] == int(MetaOp.P)]
    pa = pred.data[:, JOINT_POS].reshape(T, NUM_JOINTS, 3)
    pb = source.data[:, JOINT_POS].reshape(T, NUM_JOINTS, 3)
    dists = [
        np.linalg.norm(pa[i, j] - pb[i, j]) for i in keep for j in range(NUM_JOINTS)
    ]
    assert p_mpjpe(pred, plan, source) == pytest.approx(
        float(np.mean(dists)) * 100.0, abs=1e-9
    )


def test_p_mpjpe_requires_preserved_frames():
    T = 5
    pred, source = random_motion(T, 12), random_motion(T, 13)
    plan = _plan_with_ops(source, [MetaOp.G] * T)
    with pytest.raises(NoPreservedFrames):
        p_mpjpe(pred, plan, source)


def test_p_mpjpe_after_inversion_anchoring():
    """Anchored sampling pins preserved frames, so their joint error is
    bounded by float32 casting only."""
    T = 8
    torch.manual_seed(0)
    model = MotionDenoiser(ModelConfig(cond_arch=CondArch.TEMPORAL_FUSION, **MICRO))
    gen = torch.Generator().manual_seed(1)
    with torch.no_grad():
        for p in model.parameters():
            p.copy_(0.3 * torch.randn(p.shape, generator=gen))
    gt = random_motion(T, 14)
    known = [0, 3, 6]
    ops = np.full(T, int(MetaOp.G))
    ops[known] = int(MetaOp.P)
    plan = _plan_with_ops(gt, ops)
    out = inversion_inpaint(
        model,
        known=known,
        values=gt.data[known],
        tokens=None,
        T=T,
        cfg=SamplerConfig(steps=4, cfg_scale=1.0, seed=2),
    )
    assert p_mpjpe(out, plan, gt) < 1e-4


# ---------------------------------------------------------------- traj_error


def test_traj_error_generator_motion_is_exact():
    c = Linear(start=(0.0, 0.0), end=(0.0, 6.0), speed=1.2)
    motion = synthesize_motion(c, speed=1.2)
    assert traj_error(motion, c) < 1e-4


def test_traj_error_lateral_shift():
    c = Linear(start=(0.0, 0.0), end=(0.0, 6.0), speed=1.2)
    motion = synthesize_motion(c, speed=1.2)
    shifted = motion.data.copy()
    shifted[:, 0] += 0.1
    assert traj_error(MotionSequence(shifted), c) == pytest.approx(10.0, abs=1e-9)


def _polyline_oracle(motion, curve, n=10_000):
    ts = np.linspace(0.0, 1.0, n + 1)
    pts = np.asarray(curve.point(ts))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    T = len(motion)
    fr = np.zeros(1) if T == 1 else np.arange(T) / (T - 1.0)
    target_s = fr * cum[-1]
    idx = np.clip(np.searchsorted(cum, target_s), 1, n)
    w = (target_s - cum[idx - 1]) / np.maximum(cum[idx] - cum[idx - 1], 1e-300)
    interp = pts[idx - 1] + w[:, None] * (pts[idx] - pts[idx - 1])
    xz = motion.data[:, [0, 2]]
    return float(np.mean(np.linalg.norm(xz - interp, axis=1)) * 100.0)


def test_traj_error_dense_table_oracle():
    curves = [
        Linear(start=(0.0, 0.0), end=(3.0, 4.0), speed=1.0),
        arc_from_endpoints((2.0, 0.0), (0.0, 2.0), (0.0, 0.0), "ccw"),
        CubicBezier((0.0, 0.0), (1.0, 2.0), (3.0, 2.5), (4.0, 0.5)),
        Sinusoid(start=(0.0, 0.0), end=(0.0, 5.0), amplitude=0.6, frequency=1.5),
    ]
    for i, c in enumerate(curves):
        motion = random_motion(40, 20 + i)
        got = traj_error(motion, c)
        assert got == pytest.approx(_polyline_oracle(motion, c), abs=0.1)


def test_traj_error_single_frame():
    c = Linear(start=(1.0, 2.0), end=(4.0, 6.0), speed=1.0)
    data = np.zeros((1, FRAME_DIM))
    data[0, 0], data[0, 2] = 1.0, 2.0
    assert traj_error(MotionSequence(data), c) == pytest.approx(0.0, abs=1e-9)


# -------------------------------------------------------------- success_rate


def _line_motion(x0, z0, x1, z1, T=21):
    data = np.zeros((T, FRAME_DIM))
    data[:, 0] = np.linspace(x0, x1, T)
    data[:, 2] = np.linspace(z0, z1, T)
    return MotionSequence(data)


def _scene(obstacles):
    return ObstacleScene(
        curve=Linear(start=(0.0, 0.0), end=(4.0, 0.0), speed=1.0),
        obstacles=obstacles,
        start=(0.0, 0.0),
        goal=(4.0, 0.0),
    )


def test_success_through_center_fails():
    motion = _line_motion(0, 0, 4, 0)
    scene = _scene([Obstacle(center=(2.0, 0.0), safety_radius=0.5)])
    assert collides(motion, scene)
    assert success_rate([motion], [scene]) == 0.0


def test_success_boundary_distance_counts_as_success():
    motion = _line_motion(0, 0, 4, 0)  # frames at x = 0.0, 0.2, ... 4.0
    # center sits perpendicular over the frame at x=2.0: distance exactly 0.5
    exactly = _scene([Obstacle(center=(2.0, 0.5), safety_radius=0.5)])
    assert not collides(motion, exactly)
    inside = _scene([Obstacle(center=(2.0, 0.5), safety_radius=0.5 + 1e-9)])
    assert collides(motion, inside)


def test_success_rate_fraction_and_validation():
    clear = _line_motion(0, 0, 4, 0)
    scenes = [
        _scene([Obstacle(center=(2.0, 1.0), safety_radius=0.5)]),
        _scene([Obstacle(center=(2.0, 0.0), safety_radius=0.5)]),
    ]
    assert success_rate([clear, clear], scenes) == 0.5
    with pytest.raises(ShapeMismatch):
        success_rate([clear], scenes)
    with pytest.raises(ValueError):
        success_rate([], [])


def test_success_rate_monotone_under_radius_shrink():
    rng = np.random.default_rng(30)
    motions, scenes, shrunk = [], [], []
    for i in range(20):
        motions.append(_line_motion(0, 0, 4, rng.uniform(-1, 1)))
        obs = [
            Obstacle(center=rng.uniform(0, 4, size=2), safety_radius=rng.uniform(0.1, 0.8))
            for _ in range(rng.integers(1, 4))
        ]
        scenes.append(_scene(obs))
        shrunk.append(
            _scene([Obstacle(center=o.center, safety_radius=0.5 * o.safety_radius) for o in obs])
        )
    assert success_rate(motions, shrunk) >= success_rate(motions, scenes)


# ------------------------------------------------------------------- reports


def test_eval_report_validation_and_serialization():
    report = EvalReport(
        tasks={"prediction": {"mpjpe": 3.25, "p_mpjpe": 0.5, "success": 1.0}},
        archs={"temporal_fusion": {"delta_params": 128.0}},
    )
    csv_text = report.to_csv()
    assert "task,prediction,mpjpe,3.25" in csv_text
    assert "arch,temporal_fusion,delta_params,128.0" in csv_text
    assert "prediction" in report.format_table()
    with pytest.raises(ValueError):
        EvalReport(tasks={"t": {"mpjpe": -0.1}})
    with pytest.raises(ValueError):
        EvalReport(tasks={"t": {"success": 1.5}})
    with pytest.raises(ValueError):
        EvalReport(tasks={"t": {"mpjpe": float("nan")}})


def test_overhead_report_desk_config():
    cfg = ModelConfig()
    rows = overhead_report(cfg, T=190)
    by_arch = {r.arch: r for r in rows}
    tf, sc = by_arch["temporal_fusion"], by_arch["seq_concat"]
    ad, cn = by_arch["adaln"], by_arch["controlnet"]
    assert tf.delta_params == sc.delta_params
    assert tf.delta_params < ad.delta_params < cn.delta_params
    assert tf.delta_flops < ad.delta_flops < cn.delta_flops < sc.delta_flops
    # rows carry exactly the accounting module's numbers
    for row in rows:
        arch_cfg = ModelConfig(cond_arch=row.arch)
        assert row.delta_params == count_params(arch_cfg)["delta"]
        assert row.delta_flops == count_flops(arch_cfg, 190)["delta"]
        assert row.delta_latency is None


def test_overhead_report_flags_violating_shape():
    # at very short sequences the cloned-stack cost overtakes the doubled
    # attention rows, so the concat-vs-controlnet ordering cannot hold
    with pytest.raises(OrderingViolated) as exc:
        overhead_report(ModelConfig(), T=16)
    assert "T=16" in str(exc.value)


def test_overhead_report_latency_measurement():
    cfg = ModelConfig()  # orderings only hold at real sequence lengths
    rows = overhead_report(cfg, T=190, steps=1, latency_repeats=2)
    assert all(r.delta_latency is not None for r in rows)
    table = format_overhead_table(rows)
    csv_text = overhead_csv(rows)
    assert "temporal_fusion" in table
    assert csv_text.count("\n") == 5  # header + four archs
