"""Command-line pipeline: gen-synth, train, eval and the configuration sweep.

Every command is deterministic under --seed and writes only below its --out
directory. Exit code 0 on success, nonzero with a one-line reason otherwise.
MOEFUSE_THREADS caps how many sweep runs execute in parallel (whole runs in
separate processes; a single run is always sequential).
"""

import argparse
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import _kernels, data, metrics, trainer
from .data import LABEL_NAMES, LayerFeatureBatch
from .model import FusionModel
from .moe_fusion import MoEConfig

DEFAULT_SWEEP_GRID = "2/4/128,2/6/128,2/8/128,1/4/128,3/4/128,2/4/512,2/4/1024"


def _parse_layers(text):
    try:
        layers = tuple(int(p) for p in text.split(",") if p.strip() != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad layer list {text!r}; expected e.g. 3,7")
    if not layers:
        raise argparse.ArgumentTypeError("layer list must not be empty")
    return layers


def _parse_configs(text):
    triples = []
    for part in text.replace(" ", ",").split(","):
        if not part:
            continue
        bits = part.split("/")
        if len(bits) != 3:
            raise argparse.ArgumentTypeError(f"bad config {part!r}; expected k/n/H")
        try:
            triples.append(tuple(int(b) for b in bits))
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad config {part!r}; expected integers k/n/H")
    if not triples:
        raise argparse.ArgumentTypeError("config list must not be empty")
    return triples


def _parse_pair(text):
    try:
        a, b = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad weight pair {text!r}; expected e.g. 1.0,9.0")
    return (a, b)


def _add_train_flags(p):
    p.add_argument("--k", type=int, default=2, help="top-k experts per row")
    p.add_argument("--n-experts", type=int, default=4, help="experts per layer group")
    p.add_argument("--hidden", type=int, default=128, help="expert hidden dimension")
    p.add_argument("--head-width", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-5, help="base learning rate")
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--warmup-epochs", type=int, default=3)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--class-weights", type=_parse_pair, default=(1.0, 1.0),
                   help="cross-entropy weights as spoof,bonafide")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="moefuse",
        description="Sparse MoE fusion over precomputed layer features: data, training, EER evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate a synthetic feature split")
    g.add_argument("--n-per-class", type=int, required=True)
    g.add_argument("--t", type=int, default=201, help="frames per utterance")
    g.add_argument("--s", type=int, default=1024, help="feature dimension")
    g.add_argument("--delta", type=float, default=4.0, help="class mean separation")
    g.add_argument("--sigma", type=float, default=1.0, help="noise std")
    g.add_argument("--layers", type=_parse_layers, default=(3, 7),
                   help="comma list of informative layers in 0..23")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--split", default="train")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train", help="train a model on a feature split")
    t.add_argument("--data", required=True, help="dataset root directory")
    t.add_argument("--split", default="train")
    t.add_argument("--out", required=True)
    _add_train_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a split and report EER")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="eval")
    e.add_argument("--out", required=True)
    e.add_argument("--batch-size", type=int, default=4)
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="train+eval a grid of k/n/H configurations")
    s.add_argument("--data", required=True)
    s.add_argument("--train-split", default="train")
    s.add_argument("--eval-split", default="eval")
    s.add_argument("--out", required=True)
    s.add_argument("--configs", type=_parse_configs, default=_parse_configs(DEFAULT_SWEEP_GRID),
                   help="comma-separated k/n/H triples")
    _add_train_flags(s)
    s.set_defaults(func=cmd_sweep)
    return parser


# ---------------------------------------------------------------------------
# shared run pieces
# ---------------------------------------------------------------------------


def _ordered_batches(records, batch_size):
    for start in range(0, len(records), batch_size):
        chunk = records[start : start + batch_size]
        stacked = np.stack([r.layers for r in chunk]).astype(np.float64)
        yield LayerFeatureBatch(
            layers=[np.ascontiguousarray(stacked[:, li]) for li in range(stacked.shape[1])],
            labels=np.array([r.label for r in chunk], dtype=np.intp),
            ids=[r.utt_id for r in chunk],
        )


def run_training(data_root, split, out_dir, k, n_experts, hidden, head_width, train_cfg, quiet=True):
    """Train one configuration; write checkpoint/loss log/report under out_dir."""
    records = data.load_split(data_root, split)
    frames, feat = records[0].frames, records[0].feature_dim
    config = MoEConfig(k=k, n=n_experts, hidden=hidden, feature_dim=feat, frames=frames)
    model = FusionModel(config, head_width=head_width, seed=train_cfg.seed)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    progress = None
    if not quiet:
        progress = lambda e, loss, lr: print(f"epoch {e}: loss {loss:.6f} lr {lr:.3g}")

    start = time.perf_counter()
    result = trainer.train(model, records, train_cfg, progress=progress)
    wall = time.perf_counter() - start

    model.load_param_arrays(result.best_params)
    ckpt_path = out_dir / "checkpoint.mfck"
    trainer.save_checkpoint(ckpt_path, model, train_cfg, result.loss_log, result.best_epoch)
    with open(out_dir / "loss_log.tsv", "w", encoding="utf-8") as f:
        f.write("epoch\tlr\tloss\n")
        for i, (lr, loss) in enumerate(zip(result.lr_log, result.loss_log)):
            f.write(f"{i}\t{lr!r}\t{loss!r}\n")
    report = {
        "moe_config": asdict(config),
        "head_width": head_width,
        "train_config": asdict(train_cfg),
        "epochs_run": result.epochs_run,
        "best_epoch": result.best_epoch,
        "best_loss": min(result.loss_log),
        "num_parameters": model.num_parameters(),
        "kernel_backend": _kernels.active_backend(),
        "wall_time_s": wall,
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2, sort_keys=True)
        f.write("\n")
    return ckpt_path, report


def run_scoring(ckpt_path, data_root, split, out_dir, batch_size=4):
    """Score one split with a checkpoint; write scores + EER report.

    Unlabeled utterances are scored and written but excluded from the EER.
    """
    ckpt = trainer.load_checkpoint(ckpt_path)
    records = data.load_split(data_root, split)
    frames, feat = records[0].frames, records[0].feature_dim
    mc = ckpt.moe_config
    if (frames, feat) != (mc.frames, mc.feature_dim):
        raise data.IngestionError(
            f"checkpoint expects T={mc.frames}, S={mc.feature_dim} "
            f"but split {split!r} has T={frames}, S={feat}"
        )
    model = ckpt.build_model()
    trials = []
    for batch in _ordered_batches(records, batch_size):
        for utt_id, label, score in zip(batch.ids, batch.labels, model.scores(batch.layers)):
            trials.append(metrics.ScoredTrial(id=utt_id, score=float(score), label=LABEL_NAMES[int(label)]))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_score_file(out_dir / f"scores_{split}.tsv", trials)
    labeled = [t for t in trials if t.label in (metrics.BONAFIDE_LABEL, metrics.SPOOF_LABEL)]
    err, threshold = metrics.eer(labeled)
    with open(out_dir / f"eer_{split}.json", "w", encoding="utf-8") as f:
        json.dump(
            {"split": split, "eer": err, "threshold": threshold,
             "trials": len(trials), "labeled_trials": len(labeled)},
            f, indent=2,
        )
        f.write("\n")
    return err, threshold, len(trials)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_gen_synth(args):
    spec = data.SynthSpec(
        n_per_class=args.n_per_class,
        frames=args.t,
        feature_dim=args.s,
        delta=args.delta,
        sigma=args.sigma,
        informative_layers=args.layers,
        seed=args.seed,
    )
    records = data.generate_synthetic(spec)
    split_dir = data.write_split(records, args.out, args.split)
    print(f"wrote {len(records)} utterances to {split_dir}")
    return 0


def _train_cfg_from_args(args):
    return trainer.TrainConfig(
        lr_base=args.lr,
        weight_decay=args.weight_decay,
        warmup_epochs=args.warmup_epochs,
        max_epochs=args.max_epochs,
        patience=args.patience,
        batch_size=args.batch_size,
        seed=args.seed,
        class_weights=args.class_weights,
    )


def cmd_train(args):
    ckpt_path, report = run_training(
        args.data, args.split, args.out,
        k=args.k, n_experts=args.n_experts, hidden=args.hidden,
        head_width=args.head_width, train_cfg=_train_cfg_from_args(args),
        quiet=args.quiet,
    )
    print(
        f"trained {args.k}/{args.n_experts}/{args.hidden}: "
        f"best loss {report['best_loss']:.6f} at epoch {report['best_epoch']} "
        f"({report['epochs_run']} epochs, {report['wall_time_s']:.1f}s) -> {ckpt_path}"
    )
    return 0


def cmd_eval(args):
    err, threshold, n = run_scoring(args.checkpoint, args.data, args.split, args.out, args.batch_size)
    print(f"EER {err:.4f} at threshold {threshold:.6f} over {n} trials")
    return 0


def _sweep_worker(job):
    """Train+eval one triple; returns a result row dict. Runs in a worker process."""
    k, n, h = job["triple"]
    row = {"config": f"{k}/{n}/{h}"}
    try:
        cfg = trainer.TrainConfig(**job["train_cfg"])
        ckpt_path, report = run_training(
            job["data"], job["train_split"], job["out_dir"],
            k=k, n_experts=n, hidden=h, head_width=job["head_width"],
            train_cfg=cfg, quiet=True,
        )
        train_eer, _, _ = run_scoring(ckpt_path, job["data"], job["train_split"], job["out_dir"])
        eval_eer, _, _ = run_scoring(ckpt_path, job["data"], job["eval_split"], job["out_dir"])
        row.update(
            status="ok",
            epochs=report["epochs_run"],
            best_loss=report["best_loss"],
            train_eer=train_eer,
            eval_eer=eval_eer,
        )
    except Exception as exc:  # a failed run must not kill the sweep
        row.update(status=f"error: {exc}", epochs="", best_loss="", train_eer="", eval_eer="")
    return row


def cmd_sweep(args):
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    cfg = _train_cfg_from_args(args)
    jobs = []
    for k, n, h in args.configs:
        jobs.append(
            {
                "triple": (k, n, h),
                "data": args.data,
                "train_split": args.train_split,
                "eval_split": args.eval_split,
                "out_dir": str(out_root / f"k{k}_n{n}_h{h}"),
                "head_width": args.head_width,
                "train_cfg": asdict(cfg),
            }
        )

    workers = min(len(jobs), max(1, int(os.environ.get("MOEFUSE_THREADS", "1"))))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_worker, jobs))
    else:
        rows = [_sweep_worker(job) for job in jobs]

    cols = ["config", "status", "epochs", "best_loss", "train_eer", "eval_eer"]
    with open(out_root / "sweep.tsv", "w", encoding="utf-8") as f:
        f.write("\t".join(cols) + "\n")
        for row in rows:
            f.write("\t".join(str(row[c]) for c in cols) + "\n")
    md = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for row in rows:
        md.append("| " + " | ".join(str(row[c]) for c in cols) + " |")
    (out_root / "sweep.md").write_text("\n".join(md) + "\n", encoding="utf-8")

    for line in md:
        print(line)
    return 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
