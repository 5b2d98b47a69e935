"""Command-line front end.

Commands::

    hcral train  [--config PATH] [--out DIR] [--seed N] [--loss NAME]
    hcral curves WHICH [--param 0.6,0.7] [--x 0,0.5,1 | --points N] [--out DIR]
    hcral assign [--config PATH] [--out DIR] [--seed N]
    hcral verify [--only NAME ...]

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure
(divergence, or a failed verification check).

Output files (comma separated, one header line; train/assign floats use 9
significant digits, curve data uses shortest round-trip form):

``train``
    ``report.csv``   step,cls_loss,reg_loss,total,mean_iou
    ``summary.txt``  ``key = value`` lines: loss, seed, steps, num_positive,
                     final_mean_iou, ap50, pearson_r, region1_fraction
    ``config.txt``   the effective configuration (re-runnable)
``curves``
    ``curves_<which>.csv``  param,x,y
``assign``
    ``assign.csv``          per-anchor ATSS and EATSS labels, GT, IoU, distance
    ``assign_summary.txt``  counts, superset check, per-GT search radius
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .assign import assignment_rows, atss_assign, eatss_assign
from .config import ConfigError, ExperimentConfig, apply_overrides, dump_config, load_config
from .curves import CURVES, DEFAULT_PARAMS, X_LABELS, curve_data
from .harness import DivergenceError, predicted_boxes, scene_from_config, train

log = logging.getLogger("hcral")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def fmt(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return f"{float(x):.9g}"


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _experiment(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "loss", None) is not None:
        overrides["loss"] = args.loss
    return apply_overrides(cfg, overrides)


def write_summary(path: Path, items: Sequence[tuple[str, object]]) -> None:
    path.write_text("".join(f"{k} = {fmt(v) if not isinstance(v, str) else v}\n"
                            for k, v in items))


def cmd_train(args) -> int:
    cfg = _experiment(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = scene_from_config(cfg.scene, cfg.seed)
    report = train(scene, cfg.loss_config(), cfg.assign, cfg.opt)
    lines = ["step,cls_loss,reg_loss,total,mean_iou\n"]
    for i in range(report.steps):
        lines.append(",".join([str(i), fmt(report.cls_loss[i]), fmt(report.reg_loss[i]),
                               fmt(report.total_loss[i]), fmt(report.mean_iou[i])]) + "\n")
    (out / "report.csv").write_text("".join(lines))
    write_summary(out / "summary.txt", [
        ("loss", cfg.loss), ("seed", cfg.seed), ("steps", report.steps),
        ("num_positive", report.num_positive), ("final_mean_iou", report.final_mean_iou),
        ("ap50", report.ap50), ("pearson_r", report.pearson_r),
        ("region1_fraction", report.region1_fraction),
    ])
    (out / "config.txt").write_text(dump_config(cfg))
    print(f"{cfg.loss} seed={cfg.seed}: IoU {report.final_mean_iou:.4f}  AP50 {report.ap50:.4f}  "
          f"pearson {report.pearson_r:.4f}  ({report.wall_clock:.2f}s) -> {out}")
    return EXIT_OK


def write_curves(which: str, params, xs, out_dir: Path) -> Path:
    rows = curve_data(which, params, xs)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"curves_{which}.csv"
    path.write_text(f"param,{X_LABELS[which]},y\n"
                    + "".join(f"{q!r},{x!r},{y!r}\n" for q, x, y in rows))
    return path


def cmd_curves(args) -> int:
    params = args.param if args.param is not None else DEFAULT_PARAMS[args.which]
    xs = args.x if args.x is not None else np.linspace(0.0, 1.0, args.points)
    path = write_curves(args.which, params, xs, Path(args.out))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_assign(args) -> int:
    cfg = _experiment(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = scene_from_config(cfg.scene, cfg.seed)
    preds = predicted_boxes(scene, scene.params)
    base = atss_assign(scene.anchors, scene.gt_boxes, scene.gt_classes, cfg.assign)
    ex = eatss_assign(scene.anchors, scene.gt_boxes, scene.gt_classes, cfg.assign,
                      pred_boxes=preds)
    rows_a = assignment_rows(scene.anchors, scene.gt_boxes, base)
    rows_e = assignment_rows(scene.anchors, scene.gt_boxes, ex)
    lines = ["anchor,level,cx,cy,atss_label,atss_gt,eatss_label,eatss_gt,cls,iou,distance\n"]
    for ra, re in zip(rows_a, rows_e):
        lines.append(",".join([
            str(ra["anchor"]), str(ra["level"]), fmt(ra["cx"]), fmt(ra["cy"]),
            ra["label"], str(ra["gt"]), re["label"], str(re["gt"]), str(re["cls"]),
            fmt(re["iou"]), fmt(re["distance"])]) + "\n")
    (out / "assign.csv").write_text("".join(lines))
    superset = set(base.positive) <= set(ex.positive)
    items = [("seed", cfg.seed), ("k", cfg.assign.k), ("l", cfg.assign.l),
             ("atss_positive", base.num_positive), ("eatss_positive", ex.num_positive),
             ("superset", "true" if superset else "false")]
    for g in range(len(scene.gt_boxes)):
        items.append((f"gt{g}.dis_f", float(ex.dis_f[g])))
        items.append((f"gt{g}.added", len(ex.expanded.get(g, []))))
    write_summary(out / "assign_summary.txt", items)
    (out / "config.txt").write_text(dump_config(cfg))
    print(f"ATSS {base.num_positive} positives, EATSS {ex.num_positive} -> {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import CHECKS

    names = args.only or list(CHECKS)
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        print(f"unknown check(s): {', '.join(unknown)}; choose from {', '.join(CHECKS)}",
              file=sys.stderr)
        return EXIT_USAGE
    failed = 0
    for name in names:
        res = CHECKS[name]()
        print(res.line(), flush=True)
        failed += res.passed is False
    return EXIT_NUMERIC if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hcral", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train the toy detector on a synthetic scene")
    p.add_argument("--config")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int)
    p.add_argument("--loss")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("curves", help="emit analytic weighting curves")
    p.add_argument("which", choices=CURVES)
    p.add_argument("--param", type=_float_list)
    p.add_argument("--x", type=_float_list)
    p.add_argument("--points", type=int, default=101)
    p.add_argument("--out", default="out")
    p.set_defaults(func=cmd_curves)

    p = sub.add_parser("assign", help="dump ATSS and EATSS assignments for a scene")
    p.add_argument("--config")
    p.add_argument("--out", default="out")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_assign)

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--only", nargs="+")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
