"""Command line interface: ``memenc <subcommand> ...``.

Every subcommand exits with status 2 and a one-line JSON error on stderr
when a precondition fails.  Output files are written atomically.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import datasets, pipeline
from .checkpoint import key_fingerprint, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, from_dict, load_config, override
from .decoder import (
    http_oracle,
    reconstruct_discriminator,
    serve_predictions,
    verify_watermark,
)
from .encoder import EncodingConfig
from .metrics import pca2
from .nn import accuracy
from .robustness import (
    MaskSpec,
    PruneSpec,
    adversarial_prune,
    magnitude_prune,
    mask_input,
    transfer_finetune,
)
from .syndata import EncodingKey, gen_synthetic_data

log = logging.getLogger("memenc")

# flag -> dotted config path, for encode / train-baseline
RUN_FLAGS = {
    "train": ("data.train", str), "test": ("data.test", str),
    "label_column": ("data.label_column", str),
    "arch": ("model.arch", str), "init_seed": ("model.init_seed", int),
    "key_seed": ("key.seed", int), "n_synthetic": ("key.n", int),
    "alpha": ("key.alpha", float), "beta": ("key.beta", float),
    "mode": ("mapping.mode", str), "layer": ("mapping.layer", int),
    "unit_fraction": ("mapping.unit_fraction", float),
    "fraction": ("select.fraction", float), "select_seed": ("select.seed", int),
    "epochs": ("encoding.epochs", int), "batch_size": ("encoding.batch_size", int),
    "k": ("encoding.k", int), "lr_disc": ("encoding.lr_disc", float),
    "lr_model": ("encoding.lr_model", float), "momentum": ("encoding.momentum", float),
    "synthetic_ratio": ("encoding.synthetic_ratio", float),
    "seed": ("encoding.seed", int), "disc_seed": ("encoding.disc_seed", int),
    "decoder_seed": ("decoder.seed", int),
    "out": ("output.checkpoint", str), "report": ("output.report", str),
    "metrics_out": ("output.metrics", str), "key_out": ("output.key", str),
    "members_out": ("output.members", str),
}


def _int_list(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _float_list(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _run_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    dotted = {path: getattr(args, flag) for flag, (path, _) in RUN_FLAGS.items()
              if getattr(args, flag) is not None}
    if args.decay_epochs is not None:
        dotted["encoding.decay_epochs"] = _int_list(args.decay_epochs)
    if args.train is not None:
        dotted["data.benchmark"] = None
    for item in args.set or []:
        path, _, raw = item.partition("=")
        dotted[path] = json.loads(raw)
    return override(cfg, dotted) if dotted else cfg


def _add_run_flags(p):
    p.add_argument("--config", help="JSON run configuration")
    for flag, (_, typ) in RUN_FLAGS.items():
        p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)
    p.add_argument("--decay-epochs", help="comma-separated epochs where rates drop x0.1")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=JSON",
                   help="raw config override, repeatable")


def _load_eval_context(args):
    """model, key, split, n_classes from --model/--key/--train/--members/--test."""
    model, _ = load_checkpoint(args.model)
    key = pipeline.load_key(args.key)
    train = datasets.load_csv_dataset(args.train, args.label_column)
    test = datasets.load_csv_dataset(args.test, args.label_column)
    n_classes = model.n_classes
    split = pipeline.split_from_members(train, test, pipeline.load_members(args.members),
                                        n_classes)
    return model, key, split


def _oracle(args, model, key):
    if getattr(args, "blackbox_url", None):
        return http_oracle(args.blackbox_url, key.q, model.n_classes)
    return pipeline.oracle_for(model, key)


def _decoder_cfg(args) -> RunConfig:
    cfg = RunConfig()
    cfg.decoder.seed = args.decoder_seed
    return cfg


def _add_eval_flags(p, members=True):
    p.add_argument("--model", required=True, help="checkpoint path")
    p.add_argument("--key", required=True, help="key JSON written by encode")
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    if members:
        p.add_argument("--members", required=True, help="member index JSON written by encode")
    p.add_argument("--label-column", default="label")
    p.add_argument("--decoder-seed", type=int, default=0)
    p.add_argument("--out", help="CSV or .json metrics output (default: stdout)")


def _emit(rows, out):
    if out:
        pipeline.write_rows(out, rows)
    else:
        for r in rows:
            print(json.dumps(r))


# ---------------------------------------------------------------- commands


def cmd_gen_benchmark(args):
    if args.image:
        train, test = datasets.gen_image_benchmark(args.seed, args.classes, args.per_class,
                                                   args.image)
    else:
        train, test = datasets.gen_benchmark(args.seed, args.classes, args.per_class, args.q,
                                             args.separation)
    datasets.save_csv_dataset(args.out_train, *train)
    datasets.save_csv_dataset(args.out_test, *test)


def cmd_gen_data(args):
    if args.key:
        key = pipeline.load_key(args.key)
    else:
        key = EncodingKey(args.key_seed, args.n, args.q, args.alpha, args.beta)
    x, z = gen_synthetic_data(key).stacked()
    datasets.save_csv_dataset(args.out, x, z.astype(int), label_column="membership")


def cmd_encode(args, baseline=False):
    cfg = _run_config(args)
    result = pipeline.run_encode(cfg, baseline=baseline)
    digest = pipeline.save_run(result, cfg, "baseline" if baseline else "encoded")
    summary = dict(result.metrics, checkpoint_sha256=digest,
                   elapsed=round(result.report.elapsed, 3))
    print(json.dumps(summary))


def cmd_decode(args):
    model, _ = load_checkpoint(args.model)
    key = pipeline.load_key(args.key)
    oracle = _oracle(args, model, key)
    d = reconstruct_discriminator(oracle, key, args.decoder_seed)
    x, _ = datasets.load_csv_dataset(args.records, args.label_column)
    scores = d.prob(oracle(x))
    rows = [{"index": i, "score": float(s), "member": int(s >= 0.5)}
            for i, s in enumerate(scores)]
    _emit(rows, args.out)


def cmd_verify(args):
    model, _ = load_checkpoint(args.model)
    key = pipeline.load_key(args.key)
    oracle = _oracle(args, model, key)
    d = reconstruct_discriminator(oracle, key, args.decoder_seed)
    x, _ = datasets.load_csv_dataset(args.claimed, args.label_column)
    verdict = verify_watermark(d, oracle, x, args.tau, args.significance)
    out = verdict.to_dict()
    if args.out:
        with datasets.atomic_write(args.out, "w") as fh:
            json.dump(out, fh, indent=2)
    print(json.dumps(out))


def cmd_eval(args):
    model, key, split = _load_eval_context(args)
    oracle = _oracle(args, model, key)
    _emit([pipeline.evaluate(model, key, split, _decoder_cfg(args), oracle)], args.out)


def cmd_prune(args):
    model, key, split = _load_eval_context(args)
    rows = []
    for p in _float_list(args.p):
        pruned, _ = magnitude_prune(model, PruneSpec(p, args.scope))
        rows.append(dict(p=p, **pipeline.evaluate(pruned, key, split, _decoder_cfg(args))))
        if args.out_model:
            save_checkpoint(pruned, args.out_model, {"kind": "pruned", "p": p})
    _emit(rows, args.out)


def cmd_adv_prune(args):
    model, key, split = _load_eval_context(args)
    ft = EncodingConfig(epochs=args.epochs, batch_size=args.batch_size, k=args.k,
                        lr_disc=args.lr_disc, lr_model=args.lr_model, seed=args.seed,
                        disc_seed=args.disc_seed)
    rows = []
    for p in _float_list(args.p):
        tuned, report, _ = adversarial_prune(model, PruneSpec(p, args.scope), split, key, ft)
        rows.append(dict(p=p, **pipeline.evaluate(tuned, key, split, _decoder_cfg(args))))
        if args.out_model:
            save_checkpoint(tuned, args.out_model,
                            {"kind": "adv-pruned", "p": p, "key_fingerprint": key_fingerprint(key.seed)})
    _emit(rows, args.out)


def cmd_finetune(args):
    model, key, split = _load_eval_context(args)
    new_train = datasets.load_csv_dataset(args.new_train, args.label_column)
    new_test = datasets.load_csv_dataset(args.new_test, args.label_column)
    n_new = args.classes or int(max(new_train[1].max(), new_test[1].max())) + 1
    cfg = _decoder_cfg(args)
    rows = []

    def checkpoint(epoch, m):
        if epoch % args.every == 0:
            row = pipeline.evaluate(m, key, split, cfg)
            row["test_acc"] = accuracy(m, *new_test)
            rows.append(dict(epoch=epoch, **row))

    tuned = transfer_finetune(model, *new_train, n_new, args.epochs, args.lr, args.seed,
                              args.batch_size, on_epoch=checkpoint)
    if args.out_model:
        save_checkpoint(tuned, args.out_model, {"kind": "transfer"})
    _emit(rows, args.out)


def cmd_mask_eval(args):
    model, key, split = _load_eval_context(args)
    h, w, c = (int(v) for v in args.geometry.lower().split("x"))
    oracle = pipeline.oracle_for(model, key)
    d = reconstruct_discriminator(oracle, key, args.decoder_seed)
    rows = []
    for width in _int_list(args.w):
        spec = MaskSpec(args.mode, width, h, w, c)
        m = pipeline.membership_metrics(d, oracle, mask_input(split.x_m, spec),
                                        mask_input(split.x_test, spec))
        rows.append(dict(mode=args.mode, w=width, **m))
    _emit(rows, args.out)


def cmd_export_reps(args):
    model, key, split = _load_eval_context(args)
    oracle = pipeline.oracle_for(model, key)
    syn = gen_synthetic_data(key)
    pools = [("client_member", split.x_m, 1), ("client_nonmember", split.x_nm, 0),
             ("test", split.x_test, 0), ("synthetic_member", syn.members, 1),
             ("synthetic_nonmember", syn.nonmembers, 0)]
    reps, labels, names = [], [], []
    for name, x, bit in pools:
        if len(x):
            reps.append(oracle(x))
            labels += [bit] * len(x)
            names += [name] * len(x)
    reps = np.vstack(reps)
    proj = pca2(reps)
    rows = []
    for i in range(len(reps)):
        row = {"pool": names[i], "membership": labels[i],
               "pc1": float(proj[i, 0]), "pc2": float(proj[i, 1])}
        row.update({f"h{j}": float(v) for j, v in enumerate(reps[i])})
        rows.append(row)
    pipeline.write_rows(args.out, rows)


def _sweep_cell(task):
    base, cell = task
    cfg = override(from_dict(base), cell)
    result = pipeline.run_encode(cfg)
    return dict(cell, **result.metrics)


def cmd_sweep(args):
    with open(args.config) as fh:
        spec = json.load(fh)
    unknown = set(spec) - {"base", "grid"}
    if unknown:
        raise ConfigError(f"unknown sweep keys {sorted(unknown)}")
    base = spec["base"]
    from_dict(base, require_seeds=True)
    grid = spec.get("grid", {})
    names = list(grid)
    cells = [dict(zip(names, values)) for values in itertools.product(*grid.values())]
    tasks = [(base, c) for c in cells]
    if args.workers > 1:
        with ProcessPoolExecutor(args.workers) as pool:
            rows = list(pool.map(_sweep_cell, tasks))  # map keeps declared order
    else:
        rows = [_sweep_cell(t) for t in tasks]
    _emit(rows, args.out)


def cmd_serve(args):
    model, _ = load_checkpoint(args.model)
    server = serve_predictions(model, args.host, args.port)
    host, port = server.server_address[:2]
    print(json.dumps({"url": f"http://{host}:{port}/"}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass


# ---------------------------------------------------------------- parser


def build_parser():
    ap = argparse.ArgumentParser(prog="memenc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-benchmark", help="write Gaussian-blob train/test CSVs")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=600)
    p.add_argument("--q", type=int, default=64)
    p.add_argument("--separation", type=float, default=6.0)
    p.add_argument("--image", type=int, metavar="SIDE", help="image blobs of SIDE x SIDE x 1")
    p.add_argument("--out-train", required=True)
    p.add_argument("--out-test", required=True)
    p.set_defaults(func=cmd_gen_benchmark)

    p = sub.add_parser("gen-data", help="dump the keyed synthetic anchors to CSV")
    p.add_argument("--key", help="key JSON (alternative to the flags below)")
    p.add_argument("--key-seed", type=int)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--q", type=int, default=64)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    for name, baseline in (("encode", False), ("train-baseline", True)):
        p = sub.add_parser(name, help=("train with membership encoding" if not baseline
                                       else "train the same loop without encoding"))
        _add_run_flags(p)
        p.set_defaults(func=lambda a, b=baseline: cmd_encode(a, b))

    p = sub.add_parser("decode", help="score records with the reconstructed decoder")
    p.add_argument("--model", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--blackbox-url", help="prediction endpoint instead of the checkpoint")
    p.add_argument("--decoder-seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("verify", help="watermark ownership verdict as JSON")
    p.add_argument("--model", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--claimed", required=True)
    p.add_argument("--label-column", default="label")
    p.add_argument("--tau", type=float, default=0.7)
    p.add_argument("--significance", type=float, default=1e-6)
    p.add_argument("--blackbox-url")
    p.add_argument("--decoder-seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("eval", help="test_acc, enc_precision, enc_recall, enc_auc")
    _add_eval_flags(p)
    p.add_argument("--blackbox-url")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("prune", help="magnitude pruning sweep")
    _add_eval_flags(p)
    p.add_argument("--p", required=True, help="comma-separated fractions")
    p.add_argument("--scope", default="global", choices=["global", "per-layer"])
    p.add_argument("--out-model")
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("adv-prune", help="pruning with encoding-aware fine-tuning")
    _add_eval_flags(p)
    p.add_argument("--p", required=True)
    p.add_argument("--scope", default="global", choices=["global", "per-layer"])
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--lr-model", type=float, default=0.001)
    p.add_argument("--lr-disc", type=float, default=0.01)
    p.add_argument("--seed", type=int, default=5)
    p.add_argument("--disc-seed", type=int, default=6)
    p.add_argument("--out-model")
    p.set_defaults(func=cmd_adv_prune)

    p = sub.add_parser("finetune", help="transfer to a new task, tracking the encoding")
    _add_eval_flags(p)
    p.add_argument("--new-train", required=True)
    p.add_argument("--new-test", required=True)
    p.add_argument("--classes", type=int)
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=3)
    p.add_argument("--every", type=int, default=10)
    p.add_argument("--out-model")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("mask-eval", help="decode masked image inputs")
    _add_eval_flags(p)
    p.add_argument("--geometry", required=True, help="HxWxC, e.g. 8x8x1")
    p.add_argument("--mode", default="center", choices=["center", "boundary"])
    p.add_argument("--w", required=True, help="comma-separated mask widths")
    p.set_defaults(func=cmd_mask_eval)

    p = sub.add_parser("export-reps", help="mapped representations + PCA for plotting")
    _add_eval_flags(p)
    p.set_defaults(func=cmd_export_reps)

    p = sub.add_parser("sweep", help="Cartesian grid of encode runs, one metrics row per cell")
    p.add_argument("--config", required=True, help='{"base": RunConfig, "grid": {"a.b": [..]}}')
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="serve a checkpoint on the prediction protocol")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, KeyError, OSError, IndexError, RuntimeError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
