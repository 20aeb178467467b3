"""Command-line front end for the whole pipeline.

Subcommands: datagen, train, finetune, sample, eval, ablate. Options resolve
in three layers: schema defaults, then a flat key=value config file given
with --config, then explicit command-line flags. The fully resolved
configuration is echoed to <out>/config.txt so every run can be reproduced
from its output directory alone.

Exit codes: 0 success, 2 usage errors (bad flags, missing required options),
3 validation failures (malformed inputs, contract violations, IO problems),
4 numerical failures (NaN/inf during training or sampling).
"""

from __future__ import annotations

import argparse
import hashlib
import os
import sys

import numpy as np
import torch

from . import __version__
from .checkpoint import VERSION as CKPT_VERSION
from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .datagen import (
    OBSTACLE_COUNTS,
    TRAJECTORY_COUNTS,
    generate_edit_pairs,
    generate_obstacle_dataset,
    generate_reaction_pairs,
    generate_trajectory_dataset,
    load_dataset,
    write_dataset,
)
from .errors import IcMotionError, NonFinite
from .flow import SamplerConfig, inversion_inpaint, sample_euler
from .metrics import (
    EvalReport,
    collides,
    format_overhead_table,
    mpjpe,
    overhead_csv,
    overhead_report,
    p_mpjpe,
    traj_error,
)
from .model import CondArch, ModelConfig, MotionDenoiser
from .motion import MOTION_VERSION, NormStats, compute_stats, load_motion, normalize, save_motion
from .tasks import MetaOp, TaskKind, TaskParams, compile_task
from .tokenizer import default_vocab, tokenize, vocab_hash
from .training import TrainConfig, TrainSample, finetune, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_NUMERICAL = 4

SAMPLE_FILE = "sample.umo"
CONFIG_ECHO = "config.txt"

_REQUIRED = object()


class _UsageError(Exception):
    """Missing or malformed options discovered after argparse."""


# ------------------------------------------------------------ option plumbing


def _parse_bool(raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def _parse_counts(raw: str) -> tuple[int, int, int]:
    parts = [p.strip() for p in raw.split(",")]
    if len(parts) != 3:
        raise ValueError(f"expected three comma-separated counts, got {raw!r}")
    return tuple(int(p) for p in parts)


_COERCE = {bool: _parse_bool, "counts": _parse_counts, int: int, float: float, str: str}


def _add_options(parser: argparse.ArgumentParser, schema) -> None:
    for name, typ, default, help_text in schema:
        flag = "--" + name.replace("_", "-")
        if default is _REQUIRED:
            help_text += " (required)"
        if typ is bool:
            parser.add_argument(
                flag, dest=name, action="store_const", const=True, default=None,
                help=help_text,
            )
        elif typ == "counts":
            parser.add_argument(
                flag, dest=name, type=_parse_counts, default=None, help=help_text
            )
        else:
            parser.add_argument(flag, dest=name, type=typ, default=None, help=help_text)


def _load_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ValueError(f"{path}:{line_no}: expected key=value, got {text!r}")
            key, _, raw = text.partition("=")
            values[key.strip()] = raw.strip()
    return values


def _resolve(args: argparse.Namespace, schema) -> dict:
    """defaults < config file < explicit flags, with one coercion path."""
    file_values = _load_config_file(args.config) if args.config else {}
    known = {name for name, _, _, _ in schema}
    unknown = set(file_values) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    resolved = {}
    for name, typ, default, _ in schema:
        flag_value = getattr(args, name)
        if flag_value is not None:
            resolved[name] = flag_value
        elif name in file_values:
            resolved[name] = _COERCE[typ](file_values[name])
        elif default is _REQUIRED:
            raise _UsageError(f"missing required option --{name.replace('_', '-')}")
        else:
            resolved[name] = default
    return resolved


def _echo_config(out_dir: str, subcommand: str, opts: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    lines = [f"subcommand={subcommand}"]
    for key in sorted(opts):
        value = opts[key]
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key}={value}")
    with open(os.path.join(out_dir, CONFIG_ECHO), "w") as f:
        f.write("\n".join(lines) + "\n")


# ------------------------------------------------------------ option schemas

_MODEL_OPTS = [
    ("hidden", int, 128, "transformer width"),
    ("layers", int, 4, "transformer depth"),
    ("heads", int, 4, "attention heads"),
    ("ffn_mult", int, 4, "feed-forward width multiplier"),
    ("text_layers", int, 2, "text encoder depth"),
    ("text_dim", int, 128, "text encoder width"),
    ("max_frames", int, 190, "motion window length"),
]

_TRAIN_OPTS = [
    ("lr", float, 5e-5, "Adam learning rate"),
    ("batch_size", int, 32, "sequences per step"),
    ("steps", int, 1000, "optimizer steps"),
    ("cond_drop", float, 0.1, "prompt drop probability for guidance"),
    ("limit", int, 0, "cap records per subset, 0 means all"),
    ("subsets", str, "trajectory,obstacle,edit,reaction", "dataset subdirs to use"),
]

_SCHEMAS: dict[str, list] = {
    "datagen": [
        ("out", str, _REQUIRED, "output dataset root"),
        ("seed", int, 0, "base seed"),
        ("traj_counts", "counts", TRAJECTORY_COUNTS, "trajectory records per level"),
        ("obstacle_counts", "counts", OBSTACLE_COUNTS, "obstacle records per level"),
        ("edit_count", int, 500, "edit pairs drawn from trajectory targets"),
        ("reaction_count", int, 500, "reaction pairs drawn from trajectory targets"),
    ],
    "train": [
        ("data", str, _REQUIRED, "datagen output root"),
        ("out", str, _REQUIRED, "run output directory"),
        ("seed", int, 0, "training seed"),
        ("arch", str, "temporal_fusion", "conditioning architecture"),
    ]
    + _TRAIN_OPTS
    + _MODEL_OPTS,
    "finetune": [
        ("data", str, _REQUIRED, "datagen output root"),
        ("base", str, _REQUIRED, "pretrained checkpoint"),
        ("out", str, _REQUIRED, "run output directory"),
        ("seed", int, 0, "training seed"),
        ("two_token", bool, False, "merge edit ops into the generate token"),
    ]
    + _TRAIN_OPTS,
    "sample": [
        ("ckpt", str, _REQUIRED, "model checkpoint"),
        ("out", str, _REQUIRED, "run output directory"),
        ("task", str, "t2m", "task kind"),
        ("prompt", str, "", "prompt text, empty means unconditional"),
        ("frames", int, 0, "output length, 0 takes the source length"),
        ("steps", int, 50, "Euler steps"),
        ("cfg_scale", float, 2.0, "guidance scale"),
        ("seed", int, 0, "noise seed"),
        ("source", str, "", "source motion file for context/preserve tasks"),
        ("stats", str, "", "normalization stats json"),
        ("k", int, 0, "prediction/backcast preserved length, 0 samples it"),
        ("head", int, 0, "in-between leading length, 0 samples it"),
        ("tail", int, 0, "in-between trailing length, 0 samples it"),
        ("stride", int, 30, "keyframe stride"),
        ("star_mode", str, "generate", "free-frame mode: generate or edit"),
        ("two_token", bool, False, "merge edit ops into the generate token"),
    ],
    "eval": [
        ("data", str, _REQUIRED, "datagen output root"),
        ("out", str, _REQUIRED, "run output directory"),
        ("ckpt", str, "", "model checkpoint, unused with --ground-truth"),
        ("ground_truth", bool, False, "score dataset targets instead of samples"),
        ("subsets", str, "trajectory,obstacle,edit,reaction", "dataset subdirs"),
        ("limit", int, 8, "records per subset, 0 means all"),
        ("steps", int, 50, "Euler steps"),
        ("cfg_scale", float, 2.0, "guidance scale"),
        ("seed", int, 0, "sampling seed"),
    ],
    "ablate": [
        ("out", str, _REQUIRED, "run output directory"),
        ("frames", int, 190, "motion window length for the sweep"),
        ("steps", int, 50, "Euler steps for the flop model"),
        ("text_len", int, 64, "prompt length for the flop model"),
        ("latency_repeats", int, 0, "latency measurement repeats, 0 skips"),
        ("seed", int, 0, "latency measurement seed"),
    ]
    + _MODEL_OPTS,
}


def _model_config(opts: dict, arch: str = "temporal_fusion") -> ModelConfig:
    return ModelConfig(
        hidden_dim=opts["hidden"],
        n_layers=opts["layers"],
        n_heads=opts["heads"],
        ffn_mult=opts["ffn_mult"],
        max_T=opts["max_frames"],
        text_layers=opts["text_layers"],
        text_dim=opts["text_dim"],
        cond_arch=CondArch(arch),
    )


# ----------------------------------------------------------------- data prep


def _tokens_for(prompt: str, max_text: int) -> list[int]:
    ids = tokenize(prompt)
    if len(ids) > max_text:
        ids = ids[: max_text - 1] + [default_vocab().eot_id]
    return ids


def _load_subsets(data_root: str, subsets: str, limit: int):
    """Records from each requested subset directory plus the root NormStats.

    Falls back to stats computed over the loaded targets when the datagen
    root stats file is absent (e.g. a hand-assembled dataset directory).
    """
    records = []
    for name in [s.strip() for s in subsets.split(",") if s.strip()]:
        subset_dir = os.path.join(data_root, name)
        if not os.path.isdir(subset_dir):
            continue
        subset_records, _ = load_dataset(subset_dir)
        if limit > 0:
            subset_records = subset_records[:limit]
        records.extend(subset_records)
    if not records:
        raise ValueError(f"no records found under {data_root!r}")
    stats_path = os.path.join(data_root, "stats.json")
    if os.path.exists(stats_path):
        stats = NormStats.load(stats_path)
    else:
        stats = compute_stats([r.target for r in records])
    return records, stats


def _build_samples(records, stats, max_text, with_plans, seed, two_token=False):
    rng = np.random.default_rng(seed)
    samples = []
    for rec in records:
        x1 = normalize(rec.target, stats).data.astype(np.float32)
        toks = _tokens_for(rec.prompt, max_text)
        plan = None
        if with_plans:
            src = None
            if rec.source is not None:
                src = normalize(rec.source, stats).data.astype(np.float32)
            inst = compile_task(
                TaskKind(rec.kind),
                src,
                len(rec.target),
                params=TaskParams(two_token=two_token),
                rng=rng,
                prompt=rec.prompt,
            )
            plan = inst.plan
        samples.append(TrainSample(x1=x1, tokens=toks, plan=plan))
    return samples


def _load_model(path: str) -> MotionDenoiser:
    ck = read_checkpoint(path)
    model = MotionDenoiser(ck.config)
    load_checkpoint(path, model)
    model.eval()
    return model


# ---------------------------------------------------------------- subcommands


def _cmd_datagen(opts: dict) -> int:
    out = opts["out"]
    seed = opts["seed"]
    trajectory = generate_trajectory_dataset(opts["traj_counts"], seed)
    obstacle = generate_obstacle_dataset(opts["obstacle_counts"], seed + 1)
    corpus = [r.target for r in trajectory]
    edits = generate_edit_pairs(corpus[: opts["edit_count"]], seed + 2)
    reactions = generate_reaction_pairs(corpus[: opts["reaction_count"]], seed + 3)
    motions = []
    for name, records in (
        ("trajectory", trajectory),
        ("obstacle", obstacle),
        ("edit", edits),
        ("reaction", reactions),
    ):
        write_dataset(records, os.path.join(out, name))
        print(f"{name}: {len(records)} records")
        for rec in records:
            motions.append(rec.target)
            if rec.source is not None:
                motions.append(rec.source)
    compute_stats(motions).save(os.path.join(out, "stats.json"))
    return EXIT_OK


def _cmd_train(opts: dict) -> int:
    records, stats = _load_subsets(opts["data"], opts["subsets"], opts["limit"])
    model = MotionDenoiser(_model_config(opts, opts["arch"]))
    samples = _build_samples(
        records, stats, model.cfg.max_text_tokens, with_plans=False, seed=opts["seed"]
    )
    tc = TrainConfig(
        lr=opts["lr"],
        batch_size=opts["batch_size"],
        steps=opts["steps"],
        cond_drop=opts["cond_drop"],
        seed=opts["seed"],
    )
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    curve = train(model, samples, tc, csv_path=os.path.join(out, "loss.csv"))
    save_checkpoint(os.path.join(out, "model.ckpt"), model)
    stats.save(os.path.join(out, "stats.json"))
    print(f"trained {tc.steps} steps: loss {curve.losses[0]:.4f} -> {curve.losses[-1]:.4f}")
    return EXIT_OK


def _cmd_finetune(opts: dict) -> int:
    records, stats = _load_subsets(opts["data"], opts["subsets"], opts["limit"])
    model = _load_model(opts["base"])
    samples = _build_samples(
        records,
        stats,
        model.cfg.max_text_tokens,
        with_plans=True,
        seed=opts["seed"],
        two_token=opts["two_token"],
    )
    tc = TrainConfig(
        lr=opts["lr"],
        batch_size=opts["batch_size"],
        steps=opts["steps"],
        cond_drop=opts["cond_drop"],
        seed=opts["seed"],
    )
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    curve = finetune(model, samples, tc, csv_path=os.path.join(out, "loss.csv"))
    save_checkpoint(os.path.join(out, "model.ckpt"), model)
    stats.save(os.path.join(out, "stats.json"))
    print(f"finetuned {tc.steps} steps: loss {curve.losses[0]:.4f} -> {curve.losses[-1]:.4f}")
    return EXIT_OK


def _cmd_sample(opts: dict) -> int:
    model = _load_model(opts["ckpt"])
    stats = NormStats.load(opts["stats"]) if opts["stats"] else None
    source = load_motion(opts["source"]) if opts["source"] else None
    kind = TaskKind(opts["task"])
    T = opts["frames"] or (len(source) if source is not None else 0)
    if T <= 0:
        raise ValueError("need --frames (or a --source to take the length from)")
    src_rows = None
    if source is not None:
        normalized = normalize(source, stats) if stats is not None else source
        src_rows = normalized.data.astype(np.float32)
    params = TaskParams(
        k=opts["k"] or None,
        head=opts["head"] or None,
        tail=opts["tail"] or None,
        stride=opts["stride"],
        star_mode=opts["star_mode"],
        two_token=opts["two_token"],
    )
    inst = compile_task(
        kind, src_rows, T, params=params,
        rng=np.random.default_rng(opts["seed"]), prompt=opts["prompt"],
    )
    tokens = (
        _tokens_for(opts["prompt"], model.cfg.max_text_tokens) if opts["prompt"] else None
    )
    sampler = SamplerConfig(
        steps=opts["steps"], cfg_scale=opts["cfg_scale"], seed=opts["seed"]
    )
    preserved = np.flatnonzero(inst.plan.ops == int(MetaOp.P))
    if preserved.size:
        seq = inversion_inpaint(
            model, preserved, inst.plan.sources[preserved], tokens, T, sampler,
            stats=stats, plan=inst.plan,
        )
    else:
        seq = sample_euler(model, tokens, inst.plan, T, sampler, stats=stats)
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, SAMPLE_FILE)
    save_motion(path, seq)
    with open(path, "rb") as f:
        digest = hashlib.sha256(f.read()).hexdigest()
    print(f"{path} sha256={digest}")
    return EXIT_OK


def _sample_for_eval(model, rec, stats, opts, plan, tokens, preserved):
    sampler = SamplerConfig(
        steps=opts["steps"], cfg_scale=opts["cfg_scale"], seed=opts["seed"]
    )
    T = len(rec.target)
    if preserved is not None and preserved.size:
        return inversion_inpaint(
            model, preserved, plan.sources[preserved], tokens, T, sampler,
            stats=stats, plan=plan,
        )
    return sample_euler(model, tokens, plan, T, sampler, stats=stats)


def _cmd_eval(opts: dict) -> int:
    records, stats = _load_subsets(opts["data"], opts["subsets"], opts["limit"])
    model = None
    if not opts["ground_truth"]:
        if not opts["ckpt"]:
            raise _UsageError("eval needs --ckpt unless --ground-truth is set")
        model = _load_model(opts["ckpt"])
    rng = np.random.default_rng(opts["seed"])

    columns: dict[str, dict[str, list[float]]] = {}

    def add(task: str, metric: str, value: float) -> None:
        columns.setdefault(task, {}).setdefault(metric, []).append(float(value))

    for rec in records:
        kind = TaskKind(rec.kind)
        # trajectory/obstacle rows score prompt-driven generation, so their
        # straight-line sources stay out of the plan; edit/reaction tasks
        # need the source as context
        src_rows = None
        if rec.source is not None and kind in (TaskKind.EDIT, TaskKind.REACTION):
            src_rows = normalize(rec.source, stats).data.astype(np.float32)
        inst = compile_task(
            kind, src_rows, len(rec.target), rng=rng, prompt=rec.prompt
        )
        if model is None:
            pred = rec.target
        else:
            tokens = _tokens_for(rec.prompt, model.cfg.max_text_tokens)
            pred = _sample_for_eval(model, rec, stats, opts, inst.plan, tokens, None)
        add(rec.kind, "mpjpe_cm", mpjpe(pred, rec.target))
        if rec.curve is not None:
            add(rec.kind, "traj_err_cm", traj_error(pred, rec.curve))
        if rec.scene is not None:
            add(rec.kind, "success", 0.0 if collides(pred, rec.scene) else 1.0)

        # a preserve-style task derived from the target exercises the P path
        if kind is TaskKind.TRAJ_FOLLOW:
            target_rows = normalize(rec.target, stats).data.astype(np.float32)
            pre = compile_task(
                TaskKind.PREDICTION, target_rows, len(rec.target), rng=rng,
                prompt=rec.prompt,
            )
            preserved = np.flatnonzero(pre.plan.ops == int(MetaOp.P))
            if model is None:
                pre_pred = rec.target
            else:
                tokens = _tokens_for(rec.prompt, model.cfg.max_text_tokens)
                pre_pred = _sample_for_eval(
                    model, rec, stats, opts, pre.plan, tokens, preserved
                )
            add("prediction", "p_mpjpe_cm", p_mpjpe(pre_pred, pre.plan, rec.target))

    tasks = {
        task: {metric: float(np.mean(vals)) for metric, vals in metrics.items()}
        for task, metrics in columns.items()
    }
    report = EvalReport(tasks=tasks, archs={})
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "report.csv"), "w") as f:
        f.write(report.to_csv())
    print(report.format_table(), end="")
    return EXIT_OK


def _cmd_ablate(opts: dict) -> int:
    rows = overhead_report(
        _model_config(opts),
        T=opts["frames"],
        steps=opts["steps"],
        text_len=opts["text_len"],
        latency_repeats=opts["latency_repeats"],
        seed=opts["seed"],
    )
    out = opts["out"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "ablation.csv"), "w") as f:
        f.write(overhead_csv(rows))
    print(format_overhead_table(rows), end="")
    return EXIT_OK


_HANDLERS = {
    "datagen": _cmd_datagen,
    "train": _cmd_train,
    "finetune": _cmd_finetune,
    "sample": _cmd_sample,
    "eval": _cmd_eval,
    "ablate": _cmd_ablate,
}


# ----------------------------------------------------------------- entry point


def _version_string() -> str:
    return (
        f"icmotion {__version__} "
        f"(motion-format {MOTION_VERSION}, checkpoint-format {CKPT_VERSION}, "
        f"vocab {vocab_hash().hex()[:12]})"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icmotion",
        description="Dataset synthesis, training, sampling, and evaluation "
        "for the in-context motion model.",
    )
    parser.add_argument("--version", action="version", version=_version_string())
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND")
    for name, schema in _SCHEMAS.items():
        p = sub.add_parser(name, help=f"{name} pipeline stage")
        p.add_argument("--config", type=str, default=None, help="key=value config file")
        p.add_argument("--threads", type=int, default=0, help="cap torch threads")
        p.add_argument(
            "--deterministic", action="store_true",
            help="single-threaded ordered execution",
        )
        _add_options(p, schema)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        opts = _resolve(args, _SCHEMAS[args.subcommand])
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError) as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return EXIT_VALIDATION

    if args.deterministic:
        torch.set_num_threads(1)
    elif args.threads > 0:
        torch.set_num_threads(args.threads)

    try:
        if "out" in opts:
            _echo_config(opts["out"], args.subcommand, opts)
        return _HANDLERS[args.subcommand](opts)
    except _UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NonFinite as err:
        step = f" (step {err.step})" if err.step is not None else ""
        print(f"numerical failure{step}: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (IcMotionError, ValueError, OSError) as err:
        print(f"validation failure: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
