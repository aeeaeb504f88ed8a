"""Command-line entry point: ``groundcap <command> [options]``.

Exit codes: 0 success, 2 configuration or input error, 3 invariant/audit failure.
Every command writes ``manifest.json`` next to its outputs.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import torch

from . import config as config_mod
from .adapter import AdapterConfig
from .dataset import (
    CATEGORIES,
    CATEGORY_MIX,
    SyntheticSpec,
    compute_stats,
    gen_synthetic_dataset,
    load_annotations,
    sample_features,
    save_annotations,
    stratified_split,
)
from .errors import ConfigError, GroundcapError
from .grounding import FeatureShape, load_features, save_features
from .language import prepare_lm
from .metrics.caption import evaluate_captions
from .metrics.detection import Detection, ground_truths, mean_ap
from .training import (
    ABLATION_AXES,
    CaptionData,
    FreezeViolation,
    TrainConfig,
    TrainItem,
    ablation_csv,
    run_ablation,
    train_adapter,
)
from .verify import cross_verify, export_review_queue

log = logging.getLogger("groundcap")

EXIT_OK, EXIT_CONFIG, EXIT_AUDIT = 0, 2, 3


def git_blob_hash(path) -> str:
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


class Run:
    """Collects outputs and writes the manifest for one command invocation."""

    def __init__(self, command: str, cfg: dict, out_dir, inputs=()):
        self.command = command
        self.cfg = cfg
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs = {str(p): git_blob_hash(p) for p in inputs if p and Path(p).is_file()}
        self.outputs: list[str] = []
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(str(p))
        return p

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text, encoding="utf-8")
        return p

    def finish(self) -> None:
        manifest = {
            "command": self.command,
            "config": self.cfg,
            "seeds": {"root": self.cfg.get("seed", 0)},
            "inputs": self.inputs,
            "outputs": self.outputs,
            "wall_time": time.perf_counter() - self.t0,
        }
        (self.out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require_file(path, what: str) -> Path:
    if not path:
        raise ConfigError(f"no {what} given")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} not found: {p}")
    return p


def _shape(cfg) -> FeatureShape:
    f = cfg["features"]
    return FeatureShape(int(f["n"]), int(f["l_query"]), int(f["l_decoder"]), int(f["channels"]))


def _train_config(cfg) -> TrainConfig:
    f, a, t = cfg["features"], cfg["adapter"], dict(cfg["train"])
    adapter = AdapterConfig(
        n_tokens=int(a.get("n_tokens", f["n"])),
        channels=int(a.get("channels", f["channels"])),
        depth=int(a["depth"]),
        heads=int(a["heads"]),
        lm_width=int(cfg["lm"]["width"]),
    )
    t["lr_milestones"] = tuple(t.get("lr_milestones", ()))
    try:
        return TrainConfig.from_dict({**t, "seed": int(cfg["seed"]), "adapter": adapter})
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _bundles(samples, cfg):
    feat_dir = cfg["data"].get("features_dir")
    if feat_dir:
        return [load_features(_require_file(Path(feat_dir) / f"{s.image_id}.gvlf", "feature file")) for s in samples]
    return [sample_features(s, _shape(cfg), int(cfg["seed"])) for s in samples]


def _caption_data(cfg) -> CaptionData:
    train_path = _require_file(cfg["data"]["train"], "training annotations (data.train)")
    train = load_annotations(train_path)
    eval_path = cfg["data"].get("eval") or train_path
    evals = load_annotations(_require_file(eval_path, "evaluation annotations (data.eval)"))
    lmc = cfg["lm"]
    corpus = [s.caption for s in train]
    if lmc.get("corpus"):
        corpus += [s.caption for s in load_annotations(_require_file(lmc["corpus"], "LM corpus"))]
    elif int(lmc.get("synthetic_corpus_size", 0)):
        extra, _ = gen_synthetic_dataset(
            SyntheticSpec(int(lmc["synthetic_corpus_size"]), seed=int(cfg["seed"]) + 1_000_003), shape=None
        )
        corpus += [s.caption for s in extra]
    vocab, lm = prepare_lm(
        corpus,
        prefix_len=int(cfg["adapter"].get("n_tokens", cfg["features"]["n"])),
        width=int(lmc["width"]),
        depth=int(lmc["depth"]),
        heads=int(lmc["heads"]),
        max_positions=int(lmc["max_positions"]),
        pretrain_epochs=int(lmc["pretrain_epochs"]),
        seed=int(cfg["seed"]),
    )
    items = [TrainItem(b, tuple(vocab.encode(s.caption))) for s, b in zip(train, _bundles(train, cfg))]
    refs: dict[str, list[str]] = {}
    for s in evals:
        refs.setdefault(s.image_id, []).append(s.caption)
    firsts = list({s.image_id: s for s in evals}.values())
    return CaptionData(vocab, lm, items, _bundles(firsts, cfg), [refs[s.image_id] for s in firsts])


def cmd_train(args, cfg) -> int:
    run = Run("train", cfg, args.out_dir, [cfg["data"]["train"], cfg["data"].get("eval"), args.config])
    tcfg = _train_config(cfg)
    data = _caption_data(cfg)
    model, tlog = train_adapter(tcfg, data.train, data.lm)
    ckpt = run.path("adapter.ckpt")
    ckpt.write_bytes(model.to_bytes())
    run.path("lm.ckpt").write_bytes(data.lm.to_bytes())
    data.vocab.save(run.path("vocab.txt"))
    tlog.checkpoint_path = str(ckpt)
    run.write_text("trainlog.jsonl", tlog.to_jsonl())
    run.finish()
    if tcfg.max_epochs > 0 and not tlog.freeze.passed:
        print(f"freeze audit failed: {tlog.freeze.changed}", file=sys.stderr)
        return EXIT_AUDIT
    print(f"trained {tcfg.max_epochs} epochs, final loss {tlog.losses[-1] if tlog.records else float('nan'):.5f}")
    return EXIT_OK


def cmd_ablate(args, cfg) -> int:
    if args.axis not in ABLATION_AXES:
        raise ConfigError(f"unknown ablation axis {args.axis!r}; choose from {ABLATION_AXES}")
    run = Run("ablate", cfg, args.out_dir, [cfg["data"]["train"], cfg["data"].get("eval"), args.config])
    rows = run_ablation(args.axis, _train_config(cfg), _caption_data(cfg), int(cfg["eval"]["max_len"]))
    text = ablation_csv(rows)
    run.write_text(f"ablation_{args.axis}.csv", text)
    run.finish()
    print(text, end="")
    return EXIT_OK


def _read_jsonl(path) -> list[dict]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
    return out


def cmd_eval_captions(args, cfg) -> int:
    hyp_path = _require_file(args.hyp_path, "hypothesis file")
    ann_path = _require_file(args.ann_path, "annotation file")
    run = Run("eval-captions", cfg, args.out_dir, [hyp_path, ann_path])
    refs: dict[str, list[str]] = {}
    for s in load_annotations(ann_path):
        refs.setdefault(s.image_id, []).append(s.caption)
    hyps, ref_sets = [], []
    for rec in _read_jsonl(hyp_path):
        if rec.get("image_id") not in refs:
            raise ConfigError(f"hypothesis for unknown image_id {rec.get('image_id')!r}")
        hyps.append(rec["hypothesis"])
        ref_sets.append(refs[rec["image_id"]])
    scores = evaluate_captions(hyps, ref_sets)
    run.write_text("caption_scores.csv", scores.to_csv())
    run.write_text("caption_report.txt", scores.to_text())
    run.finish()
    print(scores.to_text(), end="")
    return EXIT_OK


def _detections(path) -> list[Detection]:
    try:
        return [Detection(r["image_id"], tuple(r["bbox"]), r["category"], float(r["score"])) for r in _read_jsonl(path)]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: malformed detection record ({exc})") from None


def cmd_eval_detection(args, cfg) -> int:
    det_path = _require_file(args.det_path, "detection file")
    ann_path = _require_file(args.ann_path, "annotation file")
    run = Run("eval-detection", cfg, args.out_dir, [det_path, ann_path])
    scores = mean_ap(_detections(det_path), ground_truths(load_annotations(ann_path)), CATEGORIES)
    run.write_text("detection_scores.csv", scores.to_csv())
    run.write_text("detection_report.txt", scores.to_text())
    run.finish()
    print(scores.to_text(), end="")
    return EXIT_OK


def cmd_verify(args, cfg) -> int:
    pred_path = _require_file(args.pred_path, "prediction file")
    ann_path = _require_file(args.ann_path, "annotation file")
    cfg["verify"] = {"threshold": args.threshold}
    run = Run("verify", cfg, args.out_dir, [pred_path, ann_path])
    samples = load_annotations(ann_path)
    flags = cross_verify(samples, _detections(pred_path), args.threshold)
    export_review_queue(flags, run.path("review_queue.jsonl"))
    n_boxes = sum(len(s.boxes) for s in samples)
    report = f"threshold {args.threshold}\nboxes {n_boxes}\nflagged {len(flags)}\n"
    run.write_text("verify_report.txt", report)
    run.finish()
    print(report, end="")
    return EXIT_OK


def cmd_stats(args, cfg) -> int:
    ann_path = _require_file(args.ann_path, "annotation file")
    run = Run("stats", cfg, args.out_dir, [ann_path])
    stats = compute_stats(load_annotations(ann_path))
    run.write_text("stats.csv", stats.to_csv())
    lines = [f"{c:24s} {stats.category_counts[c]:7d} {100 * stats.proportions[c]:6.2f}%" for c in CATEGORIES]
    run.write_text("stats.txt", "\n".join(lines) + "\n")
    run.finish()
    print("\n".join(lines))
    return EXIT_OK


def cmd_gen_synthetic(args, cfg) -> int:
    syn = cfg["synthetic"]
    mix = CATEGORY_MIX if syn["mix"] == "default" else tuple(float(x) for x in syn["mix"])
    spec = SyntheticSpec(int(syn["n_samples"]), mix, int(syn.get("seed", cfg["seed"])), int(syn["max_boxes"]))
    run = Run("gen-synthetic", cfg, args.out_dir, [args.config])
    samples, _ = gen_synthetic_dataset(spec, shape=None)
    save_annotations(samples, run.path("annotations.jsonl"))
    try:
        train, test = stratified_split(samples, float(syn["split_ratio"]), spec.seed)
    except GroundcapError as exc:
        log.warning("no split written: %s", exc)
    else:
        save_annotations(train, run.path("train.jsonl"))
        save_annotations(test, run.path("test.jsonl"))
    if syn.get("write_features"):
        feat_dir = Path(args.out_dir) / "features"
        feat_dir.mkdir(exist_ok=True)
        for s, b in zip(samples, _bundles(samples, {**cfg, "data": {"features_dir": ""}})):
            save_features(b, run.path(f"features/{s.image_id}.gvlf"))
    run.finish()
    print(f"wrote {len(samples)} samples to {args.out_dir}")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "ablate": cmd_ablate,
    "eval-captions": cmd_eval_captions,
    "eval-detection": cmd_eval_detection,
    "verify": cmd_verify,
    "stats": cmd_stats,
    "gen-synthetic": cmd_gen_synthetic,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config, or a manifest.json to replay")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    common.add_argument("--out-dir", default="runs/latest")
    common.add_argument("--seed", type=int, help="root seed (overrides config)")

    parser = argparse.ArgumentParser(prog="groundcap", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common])
    p = sub.add_parser("ablate", parents=[common])
    p.add_argument("axis")
    p = sub.add_parser("eval-captions", parents=[common])
    p.add_argument("hyp_path")
    p.add_argument("ann_path")
    p = sub.add_parser("eval-detection", parents=[common])
    p.add_argument("det_path")
    p.add_argument("ann_path")
    p = sub.add_parser("verify", parents=[common])
    p.add_argument("pred_path")
    p.add_argument("ann_path")
    p.add_argument("--threshold", type=float, default=0.5)
    p = sub.add_parser("stats", parents=[common])
    p.add_argument("ann_path")
    sub.add_parser("gen-synthetic", parents=[common])
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = config_mod.resolve(args.config, args.set, args.seed)
        torch.manual_seed(int(cfg["seed"]))
        return COMMANDS[args.command](args, cfg)
    except FreezeViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except (GroundcapError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
