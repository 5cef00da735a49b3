"""``srpose`` command line: data generation, training, evaluation and tooling.

Exit codes: 0 ok, 2 config / input error, 3 runtime failure.
"""
import argparse
import csv
import json
import logging
import os
import platform
import sys

import numpy as np

from . import config as C
from .checks import run_suite
from .data import DatasetError, as_batch, generate, read_dataset, split, write_dataset
from .decode import bench_decode, pooled_decode, write_bench_csv
from .head import SRHead, SRHeadConfig, deconv_head_param_count, param_count
from .heatmap import HeatmapStack, PoseInstance, decode_naive, encode_batch, sigma_for_resolution, write_pgm
from .metrics import OksParams, average_precision, oks, pckh
from .net import SRPoseNet
from .tensor import backend, srt4
from .train import TrainingDiverged, mean_px_error, predict, train, write_trace

log = logging.getLogger("srpose")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class InputError(Exception):
    pass


def _versions():
    from importlib.metadata import PackageNotFoundError, version

    try:
        pkg = version("artifact")
    except PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "srpose": pkg, "backend": backend.NAME}


def write_manifest(out, args, cfg):
    os.makedirs(out, exist_ok=True)
    C.dump(cfg, os.path.join(out, "config.cfg"))
    manifest = {
        "command": args.command,
        "argv": sys.argv[1:],
        "seed": args.seed,
        "config": {k: C.format_value(v, k) for k, v in sorted(cfg.items())},
        "versions": _versions(),
    }
    with open(os.path.join(out, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2)


def _need_file(path, key):
    if not os.path.exists(path):
        raise InputError(f"{key}: path {path!r} does not exist")
    return path


def load_records(cfg, seed):
    if cfg["data.dir"]:
        _need_file(os.path.join(cfg["data.dir"], "index.jsonl"), "data.dir")
        return read_dataset(cfg["data.dir"])
    return generate(cfg["data.count"], cfg["net.image_size"], cfg["net.num_keypoints"], seed)


def load_net(cfg, checkpoint, key):
    net = SRPoseNet(C.net_config(cfg))
    state = srt4.load_container(_need_file(checkpoint, key))
    try:
        net.load_state_dict(state)
    except (KeyError, ValueError) as e:
        raise InputError(f"{key}: checkpoint {checkpoint!r} does not fit the config: {e}") from None
    return net


# -- subcommands ---------------------------------------------------------------

def cmd_gen_data(args, cfg):
    records = generate(cfg["data.count"], cfg["net.image_size"], cfg["net.num_keypoints"], args.seed)
    write_dataset(args.out, records)
    counts = {s: len(split(records, s)) for s in ("train", "val", "test")}
    print(f"wrote {len(records)} records to {args.out} ({counts})")


def cmd_train(args, cfg):
    netcfg = C.net_config(cfg)
    records = load_records(cfg, args.seed)
    result = train(
        split(records, "train"),
        split(records, "val"),
        netcfg,
        C.train_settings(cfg),
        seed=args.seed,
        on_epoch=lambda e, l, v: print(f"epoch {e:3d}  loss {l:.6f}  val_err {v:.4f} px", flush=True),
    )
    srt4.save_container(os.path.join(args.out, "checkpoint.srtc"), result.state)
    write_trace(os.path.join(args.out, "trace.csv"), result.trace)
    print(f"best epoch {result.best_epoch}: val mean error {result.best_error:.4f} px")


def _to_instances(res, gts):
    preds = []
    for i, g in enumerate(gts):
        kps = np.c_[res.x[i], res.y[i], g.keypoints[:, 2]]
        preds.append(PoseInstance(kps, area=g.area, score=float(res.score[i].mean()), image_id=g.image_id))
    return preds


def cmd_eval(args, cfg):
    netcfg = C.net_config(cfg)
    records = split(load_records(cfg, args.seed), cfg["eval.split"])
    if not records:
        raise InputError(f"eval.split: no records in split {cfg['eval.split']!r}")
    images, gts = as_batch(records)
    if cfg["eval.oracle"]:
        stride = netcfg.final_stride
        stack = encode_batch(gts, netcfg.head_output_size(3), stride, sigma_for_resolution(netcfg.sigma_base, stride))
        source = "oracle"
    else:
        if not cfg["eval.checkpoint"]:
            raise InputError("eval.checkpoint: required unless eval.oracle=true")
        stack = predict(load_net(cfg, cfg["eval.checkpoint"], "eval.checkpoint"), images)
        source = cfg["eval.checkpoint"]
    params = OksParams.uniform(netcfg.num_keypoints, cfg["eval.oks_sigma"])
    decoders = {
        "naive": lambda st: decode_naive(st),
        "naive_shift": lambda st: decode_naive(st, post_shift=True),
        f"pooled_s{cfg['eval.s']}": lambda st: pooled_decode(st, cfg["eval.s"]),
    }
    rows = []
    lines = [f"evaluation of {source} on {len(gts)} '{cfg['eval.split']}' records"]
    for name, dec in decoders.items():
        res = dec(stack)
        preds = _to_instances(res, gts)
        ap = average_precision(preds, gts, params)
        mean_oks = float(np.mean([oks(p, g, params) for p, g in zip(preds, gts)]))
        pck = pckh(preds, gts, cfg["eval.pckh_alpha"])
        err = mean_px_error(res, gts)
        for t, (apt, _, _) in ap.per_threshold.items():
            rows.append((f"AP/{name}", f"{t:.2f}", apt))
        rows += [
            (f"AP/{name}", "mean", ap.ap),
            (f"OKS/{name}", "mean", mean_oks),
            (f"PCKh/{name}", f"{cfg['eval.pckh_alpha']:.2f}", pck),
            (f"mean_px_error/{name}", "", err),
        ]
        lines.append(f"  {name:<14} AP {ap.ap:.4f}  OKS {mean_oks:.4f}  PCKh {pck:.4f}  mean err {err:.4f} px")
    with open(os.path.join(args.out, "metrics.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["metric", "threshold", "value"])
        w.writerows(rows)
    summary = "\n".join(lines)
    with open(os.path.join(args.out, "summary.txt"), "w") as f:
        f.write(summary + "\n")
    print(summary)


def cmd_decode_bench(args, cfg):
    rows = bench_decode(cfg["bench.sizes"], cfg["bench.s"], cfg["bench.trials"], seed=args.seed)
    write_bench_csv(os.path.join(args.out, "bench.csv"), rows)
    print(f"{'h':>5} {'w':>5} {'s':>3} {'naive_ns':>10} {'pooled_ns':>10} {'cand_naive':>10} {'cand_pool':>9} exact")
    for r in rows:
        print(
            f"{r['h']:>5} {r['w']:>5} {r['s']:>3} {r['naive_ns']:>10} {r['pooled_ns']:>10} "
            f"{r['candidates_naive']:>10} {r['candidates_pooled']:>9} {str(r['exact']).lower()}"
        )
    if not all(r["exact"] for r in rows):
        raise RuntimeError("pooled decoding disagreed with the naive decoder")


def cmd_param_count(args, cfg):
    hcfg = SRHeadConfig(
        cfg["head.in_channels"], cfg["head.num_keypoints"], cfg["head.embed_channels"], cfg["head.upscale"], cfg["head.kernel"]
    )
    sr_formula = param_count(hcfg)
    sr_built = SRHead(hcfg, np.random.default_rng(args.seed)).num_params()
    deconv = deconv_head_param_count(
        cfg["deconv.in_channels"], cfg["deconv.channels"], cfg["deconv.layers"], cfg["deconv.kernel"], cfg["head.num_keypoints"]
    )
    table = [
        ("sr_head", sr_formula, sr_built),
        ("deconv_head", deconv, ""),
    ]
    with open(os.path.join(args.out, "param_count.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["head", "params", "instantiated"])
        w.writerows(table)
    print(f"{'head':<12} {'params':>12} {'instantiated':>12}")
    for name, n, built in table:
        print(f"{name:<12} {n:>12,} {built if built == '' else format(built, ','):>12}")
    print(f"ratio sr/deconv = {sr_formula / deconv:.4f}")


def cmd_export_heatmap(args, cfg):
    netcfg = C.net_config(cfg)
    records = load_records(cfg, args.seed)
    idx = cfg["export.index"]
    if not 0 <= idx < len(records):
        raise InputError(f"export.index: {idx} out of range for {len(records)} records")
    rec = records[idx]
    if cfg["export.checkpoint"]:
        net = load_net(cfg, cfg["export.checkpoint"], "export.checkpoint")
        maps = net.forward_infer(rec.image[None, None])
    else:
        stride = netcfg.final_stride
        maps = encode_batch(
            [rec.instance], netcfg.head_output_size(3), stride, sigma_for_resolution(netcfg.sigma_base, stride)
        ).maps
    srt4.save(os.path.join(args.out, "heatmaps.srt4"), maps)
    srt4.save(os.path.join(args.out, "image.srt4"), rec.image[None, None])
    write_pgm(os.path.join(args.out, "image.pgm"), rec.image)
    for j in range(maps.shape[1]):
        write_pgm(os.path.join(args.out, f"keypoint_{j:02d}.pgm"), maps[0, j])
    print(f"exported {maps.shape[1]} heatmaps of size {maps.shape[2]}x{maps.shape[3]} to {args.out}")


def cmd_grad_check(args, cfg):
    results = run_suite(cfg["gradcheck.shapes"], cfg["gradcheck.eps"], cfg["gradcheck.tol"], seed=args.seed)
    ok = True
    with open(os.path.join(args.out, "gradcheck.csv"), "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["op", "case", "max_rel_error", "passed"])
        for op, reports in results.items():
            for i, r in enumerate(reports):
                w.writerow([op, i, repr(r.max_rel_error), r.passed])
            worst = max(r.max_rel_error for r in reports)
            passed = all(r.passed for r in reports)
            ok &= passed
            print(f"{'PASS' if passed else 'FAIL'}  {op:<22} {len(reports)} shapes  max rel err {worst:.2e}")
    if not ok:
        raise RuntimeError("gradient check failed")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "decode-bench": cmd_decode_bench,
    "param-count": cmd_param_count,
    "export-heatmap": cmd_export_heatmap,
    "grad-check": cmd_grad_check,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--seed", type=int, default=0, metavar="U64")
    common.add_argument("--out", metavar="DIR")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", dest="overrides")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="srpose", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name in ("train", "eval", "export-heatmap"):
            sp.add_argument("--data", metavar="DIR", help="dataset dir (data.dir)")
        if name in ("eval", "export-heatmap"):
            sp.add_argument("--checkpoint", metavar="PATH")
        if name == "eval":
            sp.add_argument("--oracle", action="store_true", help="decode perfect target heatmaps")
        if name == "export-heatmap":
            sp.add_argument("--index", type=int)
        if name == "decode-bench":
            sp.add_argument("--sizes", help="comma-separated HxW list (bench.sizes)")
            sp.add_argument("--s", help="comma-separated pool sizes (bench.s)")
            sp.add_argument("--trials", type=int)
    return p


def _flag_overrides(args):
    out = []
    if getattr(args, "data", None):
        out.append(f"data.dir={args.data}")
    if getattr(args, "checkpoint", None):
        key = "eval.checkpoint" if args.command == "eval" else "export.checkpoint"
        out.append(f"{key}={args.checkpoint}")
    if getattr(args, "oracle", False):
        out.append("eval.oracle=true")
    if getattr(args, "index", None) is not None:
        out.append(f"export.index={args.index}")
    if getattr(args, "sizes", None):
        out.append(f"bench.sizes={args.sizes}")
    if getattr(args, "s", None):
        out.append(f"bench.s={args.s}")
    if getattr(args, "trials", None):
        out.append(f"bench.trials={args.trials}")
    return out


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.out is None:
        args.out = os.path.join("runs", args.command)
    try:
        if args.config:
            _need_file(args.config, "--config")
        cfg = C.load(args.config, args.overrides + _flag_overrides(args))
        C.net_config(cfg)
        write_manifest(args.out, args, cfg)
        COMMANDS[args.command](args, cfg)
    except (C.ConfigError, InputError, DatasetError, srt4.FormatError) as e:
        print(f"srpose {args.command}: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, RuntimeError, ValueError) as e:
        print(f"srpose {args.command}: failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
