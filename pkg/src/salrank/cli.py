"""``salrank`` command-line entry point.

Exit codes: 0 success, 1 invalid input or usage, 2 internal error,
3 gradient check above tolerance.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__, dataio, gradcheck, metrics, retarget, train
from .core import MaskError

EXIT_OK, EXIT_INVALID, EXIT_INTERNAL, EXIT_GRADCHECK = 0, 1, 2, 3
METRICS = ("sa-sor", "sor", "ssor", "mae")
GRADCHECK_TOL = 1e-4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _threads(n):
    return n if n and n > 0 else (os.cpu_count() or 1)


def _pmap(fn, items, threads):
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _fmt(v):
    return "undefined" if v is None else f"{v:.6f}"


# -- evaluate -----------------------------------------------------------------

def _pair_images(gt_images, pred_images):
    preds = {p.image_id: p for p in pred_images}
    unknown = sorted(set(preds) - {g.image_id for g in gt_images})
    if unknown:
        raise UsageError(f"predictions for unknown image(s): {', '.join(unknown)}")
    pairs = []
    for g in gt_images:
        p = preds.get(g.image_id)
        if p is None:
            p = dataio.ImageAnnotation(g.image_id, g.width, g.height, [])
        elif p.shape != g.shape:
            raise UsageError(f"image {g.image_id!r}: prediction size {p.width}x{p.height} "
                             f"!= ground truth {g.width}x{g.height}")
        pairs.append((g, p))
    return pairs


def score_image(metric, gt_img, pred_img, cfg):
    gts = gt_img.gt_instances()
    preds = pred_img.pred_instances()
    if metric == "sa-sor":
        return metrics.sa_sor_image(preds, gts, cfg)
    if metric == "ssor":
        return metrics.ssor_image(preds, gts)
    pred_map = metrics.render_pred_map(preds, gt_img.shape) / 255.0
    if metric == "sor":
        return metrics.sor_pixelwise_image(pred_map, gts)
    return metrics.mae_image(pred_map, metrics.render_gt_map(gts, gt_img.shape) / 255.0)


def evaluate_files(gt_path, pred_path, metric_names, iou_threshold=0.5, threads=1):
    """Per-image scores and aggregates, keyed by metric name."""
    gt_images = dataio.load_annotations(gt_path, kind="gt")
    pred_images = dataio.load_annotations(pred_path, kind="pred")
    pairs = _pair_images(gt_images, pred_images)
    cfg = metrics.MetricConfig(iou_threshold)
    results = {}
    for m in metric_names:
        vals = _pmap(lambda gp: score_image(m, gp[0], gp[1], cfg), pairs, threads)
        per_image = {g.image_id: v for (g, _), v in zip(pairs, vals)}
        defined = [v for v in vals if v is not None]
        agg = metrics.dataset_aggregate(vals) if defined else None
        results[m] = {"per_image": per_image,
                      "mean": agg.mean if agg else None,
                      "counted": len(defined),
                      "skipped": len(vals) - len(defined)}
    return results


def format_report(results) -> str:
    lines = []
    for m, r in results.items():
        lines.append(f"# metric {m}")
        lines.append("image_id\tmetric\tvalue")
        for img_id, v in r["per_image"].items():
            lines.append(f"{img_id}\t{m}\t{_fmt(v)}")
        lines.append(f"mean\t{m}\t{_fmt(r['mean'])}")
        lines.append(f"# counted {r['counted']}  undefined {r['skipped']}")
    return "\n".join(lines) + "\n"


def cmd_evaluate(args):
    names = METRICS if args.metric == "all" else (args.metric,)
    results = evaluate_files(args.gt, args.pred, names, args.iou_threshold, _threads(args.threads))
    sys.stdout.write(format_report(results))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"gt": str(args.gt), "pred": str(args.pred),
                       "iou_threshold": args.iou_threshold, "metrics": results},
                      fh, indent=1, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


# -- stats / render -------------------------------------------------------------

def cmd_stats(args):
    for path in args.gt:
        images = dataio.load_annotations(path, kind="gt", check_count=False)
        table = dataio.dataset_stats(images)
        sys.stdout.write(table.to_csv(label=os.path.basename(str(path))))
        if args.categories:
            cs = dataio.category_scores(images)
            for cat, s in cs.scores.items():
                print(f"category\t{cat}\t{s:.4f}\t{math.log1p(s):.4f}")
    return EXIT_OK


def cmd_render(args):
    images = dataio.load_annotations(args.annotations, kind=args.kind)
    out = dataio.ensure_dir(args.out_dir)
    for img in images:
        if args.kind == "gt":
            rmap = metrics.render_gt_map(img.gt_instances(), img.shape)
        else:
            rmap = metrics.render_pred_map(img.pred_instances(), img.shape)
        dataio.write_gray(out / f"{img.image_id}.png", rmap)
        print(out / f"{img.image_id}.png")
    return EXIT_OK


# -- retarget -----------------------------------------------------------------

def cmd_retarget(args):
    image = dataio.read_rgb(args.image)
    H, W = image.shape[:2]
    if args.rank_map:
        rank_map = dataio.read_gray(args.rank_map)
        if rank_map.shape != (H, W):
            raise UsageError(f"rank map is {rank_map.shape[1]}x{rank_map.shape[0]}, image is {W}x{H}")
    else:
        rank_map = np.zeros((H, W))
    if args.target_width is not None:
        target = args.target_width
    else:
        if not 0 < args.target_frac < 1:
            raise UsageError(f"--target-frac must be in (0, 1), got {args.target_frac}")
        target = int(math.floor(args.target_frac * W + 0.5))
    out = retarget.retarget_width(image, rank_map, target, retarget.RetargetConfig(args.epsilon))
    dataio.write_rgb(args.out, out)
    print(f"{W}x{H} -> {out.shape[1]}x{out.shape[0]}  {args.out}")
    return EXIT_OK


# -- train-toy / gradcheck -------------------------------------------------------

def cmd_train_toy(args):
    task = train.SyntheticTask(seed=args.seed, n_samples=args.samples, swap_prob=args.swap_prob)
    eval_task = train.SyntheticTask(seed=args.seed + 10_000, n_samples=args.eval_samples)
    cfg = train.TrainConfig(lr=args.lr, steps=args.steps, gamma=args.gamma, loss=args.loss,
                            model=args.model, K=args.K, seed=args.seed, eval_every=args.eval_every)
    data = train.generate_synthetic(task)
    held_out = train.generate_synthetic(eval_task)
    result = train.train(train.init_model(task.D, cfg), data, cfg, eval_set=held_out)
    final = train.evaluate_ranking(result.model, held_out, threads=_threads(args.threads))
    log = result.log + [{"step": cfg.steps, "final_eval": final}]
    if args.log:
        train.write_log(args.log, log)
    if args.checkpoint:
        result.model.graph.save(args.checkpoint, M=task.M)
    first = result.losses[0] if result.losses else float("nan")
    last = result.losses[-1] if result.losses else float("nan")
    print(f"steps {cfg.steps}  loss {first:.4f} -> {last:.4f}  held-out rank correlation {final:.4f}")
    return EXIT_OK


def cmd_gradcheck(args):
    reports = gradcheck.run(args.seed, args.configs)
    worst = max(r.max_rel_error for r in reports)
    for r in reports:
        c = r.config
        print(f"N={c['N']} D={c['D']} K={c['K']} M={c['M']} gamma={c['gamma']}  "
              f"max rel err {r.max_rel_error:.3e}")
    ok = worst < GRADCHECK_TOL
    print(f"{'PASS' if ok else 'FAIL'}  max relative error {worst:.3e} (tolerance {GRADCHECK_TOL:g})")
    return EXIT_OK if ok else EXIT_GRADCHECK


# -- parser ---------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="salrank", description="Instance-level saliency ranking toolkit.")
    p.add_argument("--version", action="version", version=f"salrank {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    e = sub.add_parser("evaluate", help="score predictions against ground truth")
    e.add_argument("--gt", required=True)
    e.add_argument("--pred", required=True)
    e.add_argument("--metric", choices=METRICS + ("all",), default="sa-sor")
    e.add_argument("--iou-threshold", type=float, default=0.5)
    e.add_argument("--out", help="write a JSON summary here")
    e.add_argument("--threads", type=int, default=0, help="0 = all cores")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("stats", help="instance-count distribution of annotation files")
    s.add_argument("--gt", required=True, nargs="+")
    s.add_argument("--categories", action="store_true", help="also print per-category scores")
    s.set_defaults(func=cmd_stats)

    r = sub.add_parser("render", help="write one rank-map PNG per image")
    r.add_argument("annotations")
    r.add_argument("--kind", choices=("gt", "pred"), default="gt")
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_render)

    t = sub.add_parser("retarget", help="rank-aware seam carving (width only)")
    t.add_argument("--image", required=True)
    t.add_argument("--rank-map", help="8-bit rank map PNG; omitted = plain seam carving")
    width = t.add_mutually_exclusive_group(required=True)
    width.add_argument("--target-width", type=int)
    width.add_argument("--target-frac", type=float)
    t.add_argument("--epsilon", type=float, default=0.05)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_retarget)

    y = sub.add_parser("train-toy", help="train the graph module on a synthetic task")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--threads", type=int, default=0)
    y.add_argument("--steps", type=int, default=2000)
    y.add_argument("--lr", type=float, default=3e-3)
    y.add_argument("--gamma", type=float, default=1.0)
    y.add_argument("--loss", choices=("weighted-ranking", "uniform-ranking", "rank-classification"),
                   default="weighted-ranking")
    y.add_argument("--model", choices=tuple(train.MODEL_GRAPHS), default="full-graphs")
    y.add_argument("--K", type=int, default=4)
    y.add_argument("--samples", type=int, default=400)
    y.add_argument("--eval-samples", type=int, default=200)
    y.add_argument("--swap-prob", type=float, default=0.0)
    y.add_argument("--eval-every", type=int, default=250)
    y.add_argument("--log", help="JSON-lines metrics log")
    y.add_argument("--checkpoint", help="npz parameter checkpoint")
    y.set_defaults(func=cmd_train_toy)

    g = sub.add_parser("gradcheck", help="finite-difference check of all gradients")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--configs", type=int, default=1)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # usage errors, --help, --version
        return exc.code if isinstance(exc.code, int) else EXIT_INVALID
    try:
        return args.func(args)
    except (UsageError, dataio.AnnotationError, MaskError, retarget.SeamError,
            OSError, ValueError) as exc:
        print(f"salrank {args.command}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        print(f"salrank {args.command}: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
