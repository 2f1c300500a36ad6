"""Command-line entry point: ``mqa <command> [--config FILE] [--seed N] [--out DIR]``.

Every command writes its artifacts under ``--out`` together with
``run_manifest.json`` (config hash, seed, inputs, artifact checksums and a
``volatile`` block holding the timestamp and timings). Everything except
that volatile block is byte-identical across re-runs with the same config,
seed and inputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from mqa import __version__
from mqa import config as config_mod
from mqa.augment import apply_spec, policy_choices
from mqa.errors import DataError, MQAError
from mqa.harness import (
    ablation_csv, attach_labels, clinical_labels, evaluate_mae, run_ablation, run_experiment,
    train_scorer,
)
from mqa.mqaformer import ScorerModel, predict_scores
from mqa.scoregen import fit_score_model, generate_labels, read_label_file, separation_report, write_label_file
from mqa.skeldata import (
    MANIFEST_NAME, SkeletalSequence, group_by_exercise, load_dataset, split_dataset, write_dataset,
)
from mqa.synth import generate

RUN_MANIFEST = "run_manifest.json"
AXES = ("x", "y", "z")


class Run:
    """Collects artifacts written by one command and emits the run manifest."""

    def __init__(self, command: str, out: Path, cfg: dict, inputs: dict[str, Path] | None = None):
        self.command, self.out, self.cfg = command, out, cfg
        self.inputs = inputs or {}
        self.artifacts: list[Path] = []
        self.timing: dict[str, float] = {}
        self.started = time.perf_counter()
        out.mkdir(parents=True, exist_ok=True)

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def add(self, *paths: Path) -> None:
        self.artifacts.extend(Path(p) for p in paths)

    def write_text(self, rel: str, text: str) -> Path:
        p = self.path(rel)
        p.write_text(text)
        self.add(p)
        return p

    def write_json(self, rel: str, obj) -> Path:
        return self.write_text(rel, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def finish(self) -> Path:
        self.timing["total_seconds"] = time.perf_counter() - self.started
        missing = [str(p) for p in self.artifacts if not p.exists()]
        if missing:
            raise DataError(f"artifacts were not written: {missing}")
        manifest = {
            "tool": "mqa",
            "version": __version__,
            "command": self.command,
            "config_hash": config_mod.config_hash(self.cfg),
            "config": self.cfg,
            "seed": self.cfg["seed"],
            "inputs": {k: _describe_input(v) for k, v in sorted(self.inputs.items())},
            "artifacts": [
                {"path": str(p.relative_to(self.out)), "sha256": _sha256(p)}
                for p in sorted(set(self.artifacts))
            ],
            "volatile": {
                "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
                "timing": self.timing,
            },
        }
        path = self.out / RUN_MANIFEST
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _describe_input(path: Path) -> dict:
    path = Path(path)
    ref = path / MANIFEST_NAME if path.is_dir() else path
    info = {"path": str(path)}
    if ref.is_file():
        info["sha256"] = _sha256(ref)
    return info


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _load_labeled(data_dir, labels_path, exercise: str | None = None):
    seqs = load_dataset(data_dir)
    if exercise:
        seqs = [s for s in seqs if s.exercise == exercise]
        if not seqs:
            raise DataError(f"no sequences for exercise {exercise!r} in {data_dir}")
    if labels_path:
        return attach_labels(seqs, read_label_file(labels_path))
    if all(s.clinical_score is not None for s in seqs):
        return clinical_labels(seqs)
    raise DataError("sequences have no quality scores: pass --labels (from gen-scores) or use clinical scores")


def _by_exercise(labeled):
    groups: dict[str, list] = {}
    for item in labeled:
        groups.setdefault(item.seq.exercise, []).append(item)
    return dict(sorted(groups.items()))


def _feature_names(D: int) -> list[str]:
    return [f"j{c // 3}_{AXES[c % 3]}" for c in range(D)]


def _trace_csv(original: np.ndarray, augmented: np.ndarray) -> str:
    """Original and augmented per-joint traces side by side; the shorter side is left blank."""
    names = _feature_names(original.shape[1])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame"] + [f"original_{n}" for n in names] + [f"augmented_{n}" for n in names])
    for t in range(max(len(original), len(augmented))):
        left = [repr(float(v)) for v in original[t]] if t < len(original) else [""] * len(names)
        right = [repr(float(v)) for v in augmented[t]] if t < len(augmented) else [""] * len(names)
        w.writerow([t] + left + right)
    return buf.getvalue()


def _matrix_csv(matrix: np.ndarray, labels: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query"] + labels)
    for label, row in zip(labels, matrix):
        w.writerow([label] + [repr(float(v)) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args, cfg) -> Run:
    run = Run("synth", args.out, cfg)
    seqs = generate(config_mod.synth_config(cfg), seed=cfg["seed"])
    manifest = write_dataset(seqs, args.out)
    run.add(manifest, *(args.out / f"{s.seq_id}.txt" for s in seqs))
    print(f"wrote {len(seqs)} sequences to {args.out}")
    return run


def cmd_augment(args, cfg) -> Run:
    run = Run("augment", args.out, cfg, {"data": args.data})
    seqs = load_dataset(args.data)
    policy = config_mod.policy(cfg)
    augmented: list[SkeletalSequence] = []
    for seq, (k, op_seed) in zip(seqs, policy_choices(len(seqs), len(policy), cfg["seed"])):
        aug = apply_spec(seq, policy[k], op_seed)
        augmented.append(aug)
        run.write_text(f"traces/{seq.seq_id}.csv", _trace_csv(seq.frames, aug.frames))
    seq_dir = args.out / "sequences"
    run.add(write_dataset(augmented, seq_dir), *(seq_dir / f"{s.seq_id}.txt" for s in augmented))
    print(f"augmented {len(seqs)} sequences into {seq_dir}")
    return run


def cmd_genscores(args, cfg) -> Run:
    run = Run("gen-scores", args.out, cfg, {"data": args.data})
    seqs = load_dataset(args.data)
    sg = config_mod.scoregen_config(cfg)
    labels, reports = [], []
    for ex, group in group_by_exercise(seqs).items():
        if not any(s.label == "correct" for s in group):
            raise DataError(f"exercise {ex!r} has no correct repetitions to model")
        model = fit_score_model(group, sg, seed=cfg["seed"])
        run.add(*model.save(run.path(f"models/{ex}")))
        labels.extend(generate_labels(model.ae, model.gmm, model.calibration, group))
        report = separation_report(ex, group, sg, seed=cfg["seed"], model=model)
        reports.append(report)
        print(f"{ex}: within-subject SD {report.within_subject:.4f}, between-subject SD "
              f"{'n/a' if report.between_subject is None else f'{report.between_subject:.4f}'}")
    run.add(write_label_file(labels, run.path("labels.csv")))
    run.write_json("separation.json", [r.to_dict() for r in reports])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["exercise", "within_subject", "between_subject"])
    for r in reports:
        w.writerow([r.exercise, f"{r.within_subject:.6f}",
                    "" if r.between_subject is None else f"{r.between_subject:.6f}"])
    run.write_text("separation.csv", buf.getvalue())
    return run


def cmd_train(args, cfg) -> Run:
    inputs = {"data": args.data} | ({"labels": args.labels} if args.labels else {})
    run = Run("train", args.out, cfg, inputs)
    tc = config_mod.train_config(cfg)
    summary = {}
    batch_times = []
    for ex, items in _by_exercise(_load_labeled(args.data, args.labels, args.exercise)).items():
        split = split_dataset(items, tc.split_ratio, tc.seed)
        model, log = train_scorer(tc, split.train, split.validation, seed=tc.seed)
        mae = evaluate_mae(model, split.validation)
        val_ids = [item.seq.seq_id for item in split.validation]
        run.add(model.save(run.path(f"models/{ex}.ckpt"), {
            "exercise": ex, "validation_ids": val_ids, "validation_mae": mae, "seed": tc.seed,
        }))
        run.write_text(f"logs/{ex}.csv", log.to_csv())
        summary[ex] = {"validation_mae": mae, "best_epoch": log.best_epoch, "epochs": len(log.epochs),
                       "validation_ids": val_ids}
        batch_times.extend(log.batch_seconds)
        print(f"{ex}: validation MAE {mae:.4f} (best epoch {log.best_epoch} of {len(log.epochs)})")
    run.write_json("train_summary.json", summary)
    if batch_times:
        run.timing["ms_per_batch"] = 1000.0 * float(np.mean(batch_times))
    return run


def cmd_eval(args, cfg) -> Run:
    inputs = {"data": args.data} | ({"labels": args.labels} if args.labels else {})
    if args.model:
        inputs["model"] = args.model
    run = Run("eval", args.out, cfg, inputs)
    if args.model:
        from mqa.numcore import load_checkpoint

        _, hyper = load_checkpoint(args.model)
        model = ScorerModel.load(args.model)
        items = _load_labeled(args.data, args.labels, hyper.get("exercise"))
        if not args.all:
            wanted = set(hyper.get("validation_ids", []))
            items = [item for item in items if item.seq.seq_id in wanted]
        mae = evaluate_mae(model, items)
        run.write_json("eval.json", {"model": Path(args.model).name, "n": len(items), "mae": mae,
                                     "subset": "all" if args.all else "validation"})
        print(f"MAE {mae:.6f} on {len(items)} sequences")
        return run
    tc = config_mod.train_config(cfg)
    report = run_experiment(tc, _load_labeled(args.data, args.labels, args.exercise))
    run.write_text("report.json", report.to_json())
    run.write_text("report.csv", report.to_csv())
    run.timing["ms_per_batch"] = report.ms_per_batch
    for f in report.failures:
        print(f"warning: {f['exercise']} run {f['run']} failed: {f['error']}", file=sys.stderr)
    mean = "n/a" if report.mean_mae is None else f"{report.mean_mae:.4f}"
    print(f"mean MAE over {tc.runs} runs: {mean}")
    return run


def cmd_ablate(args, cfg) -> Run:
    inputs = {"data": args.data} | ({"labels": args.labels} if args.labels else {})
    run = Run("ablate", args.out, cfg, inputs)
    reports = run_ablation(config_mod.train_config(cfg), _load_labeled(args.data, args.labels, args.exercise))
    run.write_text("ablation.csv", ablation_csv(reports))
    run.write_json("ablation.json", [r.to_dict() for r in reports])
    run.timing["ms_per_batch"] = {r.embedder: r.ms_per_batch for r in reports}
    print(ablation_csv(reports, include_timing=True), end="")
    return run


def cmd_attention(args, cfg) -> Run:
    from mqa.numcore import load_checkpoint

    run = Run("attention", args.out, cfg, {"data": args.data, "model": args.model})
    _, hyper = load_checkpoint(args.model)
    model = ScorerModel.load(args.model)
    seqs = load_dataset(args.data)
    ex = args.exercise or hyper.get("exercise")
    if ex:
        seqs = [s for s in seqs if s.exercise == ex]
    if not seqs:
        raise DataError("no sequences to compute attention for")
    _, record = predict_scores(model, seqs)
    windows = [f"w{i}" for i in range(model.cfg.N)]
    for layer, maps in enumerate(record.encoder):
        mean = maps.mean(axis=0)  # average over sequences: [heads, N, N]
        for h, m in enumerate(mean):
            run.write_text(f"attention/encoder_layer{layer}_head{h}.csv", _matrix_csv(m, windows))
    parts = record.mean_part_attention()
    if parts is not None:
        for h, m in enumerate(parts):
            run.write_text(f"attention/parts_head{h}.csv", _matrix_csv(m, record.part_names))
    print(f"wrote attention maps for {len(seqs)} sequences to {args.out / 'attention'}")
    return run


COMMANDS = {
    "synth": (cmd_synth, "generate a synthetic labelled dataset"),
    "augment": (cmd_augment, "augment a dataset and export before/after traces"),
    "gen-scores": (cmd_genscores, "fit score models per exercise, write labels and separation report"),
    "train": (cmd_train, "train one scorer per exercise"),
    "eval": (cmd_eval, "evaluate a checkpoint, or run the multi-run experiment"),
    "ablate": (cmd_ablate, "compare the four window embedders"),
    "attention": (cmd_attention, "export encoder and body-part attention maps"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (repeatable)")
    ap = argparse.ArgumentParser(prog="mqa", description="Movement quality assessment toolkit.")
    ap.add_argument("--version", action="version", version=f"mqa {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text)
        if name != "synth":
            p.add_argument("--data", type=Path, required=True, help="dataset directory")
        if name in ("train", "eval", "ablate", "attention"):
            p.add_argument("--exercise", help="restrict to one exercise")
        if name in ("train", "eval", "ablate"):
            p.add_argument("--labels", type=Path, help="label CSV from gen-scores (default: clinical scores)")
        if name == "eval":
            p.add_argument("--model", type=Path, help="scorer checkpoint; without it, run the full experiment")
            p.add_argument("--all", action="store_true", help="with --model, evaluate every sequence")
        if name == "attention":
            p.add_argument("--model", type=Path, required=True, help="scorer checkpoint")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.load_config(args.config, overrides=args.set)
        if args.seed is not None:
            cfg["seed"] = args.seed
        handler = COMMANDS[args.command][0]
        handler(args, cfg).finish()
    except MQAError as exc:
        print(f"mqa {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"mqa {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
