"""``lhs`` command line: train, encode, classify, verify and benchmark.

Results go to stdout as a readable table followed by ``key=value``
records; progress and timing go to stderr. Defaults can come from an INI
file (``--config``) whose ``[common]`` section and per-command section
(e.g. ``[bench]``) hold option names as keys; explicit flags win.
"""

import argparse
import configparser
import logging
import os
import sys
import time

import numpy as np

from . import classify, harness, metric
from .encoder import Descriptor, LhsEncoder, WhiteningStats, compute_whitening
from .gmm import GmmModel, subsample_features, train_gmm
from .patterns import pattern_descriptor
from .raster import hflip, list_images, parse_grid

log = logging.getLogger("lhs")


def _ints(text, n):
    vals = tuple(int(v) for v in text.replace("x", ",").split(","))
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} integers, got {text!r}")
    return vals


def _roi(text):
    return _ints(text, 4)


def _size(text):
    return _ints(text, 2)


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _add_common(p):
    p.add_argument("--config", help="INI file with defaults")
    p.add_argument("--seed", type=int, default=harness.default_seed())
    p.add_argument("--threads", type=int, default=harness.default_threads())
    p.add_argument("-v", "--verbose", action="store_true")


def _add_preprocess(p):
    p.add_argument("--roi", type=_roi, help="crop LEFT,TOP,RIGHT,BOTTOM first")
    p.add_argument("--center-crop", type=_size, help="then center-crop to WxH")
    p.add_argument("--resize", type=_size, help="then bilinear resize to WxH")


def _add_pipeline(p, kinds=True):
    if kinds:
        p.add_argument("--kind", choices=("lhs", "lbp", "ltp"), default="lhs")
    p.add_argument("--k", type=int, default=16, help="GMM components")
    p.add_argument("--sampling", choices=("rectangular", "circular"), default="circular")
    p.add_argument("--grid", default=None, help="ROWSxCOLS cell layout, e.g. 7x4")
    p.add_argument("--max-samples", type=int, default=1_000_000)
    p.add_argument("--em-iters", type=int, default=200)
    p.add_argument("--ltp-t", type=float, default=5.0)
    _add_preprocess(p)


def _pipeline_config(args, kind=None):
    return harness.PipelineConfig(
        kind=kind or getattr(args, "kind", "lhs"), n_components=args.k, mode=args.sampling,
        grid=parse_grid(args.grid), max_samples=args.max_samples, em_max_iter=args.em_iters,
        ltp_t=args.ltp_t, c_grid=getattr(args, "c_grid", classify.DEFAULT_C_GRID),
        seed=args.seed, roi=args.roi, center_crop=args.center_crop, resize=args.resize,
        threads=args.threads)


def _print_records(records, stream=None):
    stream = stream or sys.stdout
    for key, value in records.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        print(f"{key}={value}", file=stream)


def _print_table(header, rows):
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    line = "  ".join(f"{h:<{w}}" for h, w in zip(header, widths))
    print(line)
    print("-" * len(line))
    for row in rows:
        print("  ".join(f"{str(c):<{w}}" for c, w in zip(row, widths)))


def _image_inputs(args):
    if getattr(args, "manifest", None):
        return [e.path for e in harness.read_manifest(args.manifest)]
    paths = list_images(args.images)
    if not paths:
        raise ValueError("no input images")
    return paths


# --- commands --------------------------------------------------------------

def cmd_synth(args):
    entries = harness.generate_synthetic_textures(args.out, count=args.count, size=args.size,
                                                  seed=args.seed)
    print(f"wrote {len(entries)} images to {args.out}")
    _print_records({"images": len(entries), "manifest": os.path.join(args.out, "manifest.tsv")})


def cmd_train_gmm(args):
    cfg = _pipeline_config(args, "lhs")
    paths = _image_inputs(args)
    images = harness.load_images(paths, cfg)
    tcfg = cfg.train_config()
    t0 = time.perf_counter()
    samples = subsample_features(images, cfg.mode, tcfg)
    log.info("sampled %d differential vectors from %d images", len(samples), len(images))
    model = train_gmm(samples, tcfg, cfg.mode)
    stats = compute_whitening(model, samples)
    log.info("trained in %.1fs", time.perf_counter() - t0)
    model.save(args.out)
    stats.save(args.stats)
    print(f"K={model.n_components} GMM ({model.mode.value}) -> {args.out}; whitening -> {args.stats}")
    _print_records({"components": model.n_components, "samples": len(samples),
                    "em_iterations": len(model.loglik_trace) - 1,
                    "final_loglik": model.loglik_trace[-1]})


def cmd_encode(args):
    cfg = _pipeline_config(args)
    paths = _image_inputs(args)
    images = harness.load_images(paths, cfg)
    grid = parse_grid(args.grid)
    if args.kind == "lhs":
        if not (args.model and args.stats):
            raise ValueError("--model and --stats are required for LHS encoding")
        model = GmmModel.load(args.model)
        enc = LhsEncoder(model, WhiteningStats.load(args.stats), grid)
        make = enc.descriptor
    else:
        def make(img):
            values = pattern_descriptor(img, cfg.mode, args.kind, args.ltp_t, grid)
            return Descriptor(values, args.kind, grid or (1, 1), 0, cfg.mode)
    t0 = time.perf_counter()
    descs = harness.parallel_map(make, images, args.threads)
    flipped = harness.parallel_map(lambda im: make(hflip(im)), images, args.threads) if args.flip else None
    harness.save_descriptor_dir(args.out, paths, descs, flipped)
    log.info("encoded %d images in %.2fs", len(images), time.perf_counter() - t0)
    print(f"encoded {len(descs)} images ({args.kind}, dim {len(descs[0].values)}) -> {args.out}")
    _print_records({"images": len(descs), "dim": len(descs[0].values)})


def _manifest_descriptors(manifest, desc_dir):
    entries = harness.read_manifest(manifest)
    index, _, _ = harness.load_descriptor_dir(desc_dir)
    missing = [e.path for e in entries if e.path not in index]
    if missing:
        raise ValueError(f"{len(missing)} manifest images have no descriptor in {desc_dir}, e.g. {missing[0]}")
    return np.array([index[e.path] for e in entries]), [e.label for e in entries]


def cmd_train_svm(args):
    x, labels = _manifest_descriptors(args.train, args.desc)
    C = args.c
    if C is None:
        C, accs = classify.svm_cv_select_c(x, labels, args.c_grid, args.folds, args.seed)
        _print_table(["C", "cv_accuracy"], [[f"{c:g}", f"{a:.4f}"] for c, a in zip(sorted(args.c_grid), accs)])
    model = classify.svm_train(x, labels, C, seed=args.seed)
    model.save(args.out)
    _print_records({"C": C, "classes": len(model.classes), "model": args.out})


def _report_classification(rep):
    _print_table(["class", "accuracy"], [[c, f"{a:.4f}"] for c, a in rep.per_class_accuracy.items()])
    print(f"overall accuracy {rep.accuracy:.4f} on {rep.n} images")
    _print_records(rep.records())


def cmd_classify(args):
    cfg = _pipeline_config(args)
    if args.desc:
        xtr, ytr = _manifest_descriptors(args.train, args.desc)
        xte, yte = _manifest_descriptors(args.test, args.desc)
    else:
        train = harness.read_manifest(args.train)
        test = harness.read_manifest(args.test)
        tr_imgs = harness.load_images([e.path for e in train], cfg)
        te_imgs = harness.load_images([e.path for e in test], cfg)
        encoder = harness.fit_encoder(tr_imgs, cfg)
        xtr = harness.encode_all(encoder, tr_imgs, cfg.threads)
        xte = harness.encode_all(encoder, te_imgs, cfg.threads)
        ytr, yte = [e.label for e in train], [e.label for e in test]
    if args.svm:
        model = classify.LinearSvmModel.load(args.svm)
    else:
        C, _ = classify.svm_cv_select_c(xtr, ytr, args.c_grid, args.folds, args.seed)
        model = classify.svm_train(xtr, ytr, C, seed=args.seed)
    pred = classify.svm_predict(model, xte)
    rep = classify.eval_report(pred, yte, classes=model.classes)
    _report_classification(rep)
    _print_records({"C": model.C})


def cmd_train_metric(args):
    pairs = harness.read_pairs(args.pairs)
    index, flips, _ = harness.load_descriptor_dir(args.desc)
    xa = np.array([index[a] for a, _, _ in pairs])
    xb = np.array([index[b] for _, b, _ in pairs])
    y = np.array([p[2] for p in pairs], dtype=np.float64)
    fa = fb = None
    if flips is not None and not args.no_flip:
        fa = np.array([flips[a] for a, _, _ in pairs])
        fb = np.array([flips[b] for _, b, _ in pairs])
    cfg = metric.SgdConfig(rate=args.rate, n_iter=args.iters, seed=args.seed, bias=args.bias,
                           margin=args.margin, symmetric_v=args.symmetric_v)
    dim = min(args.dim, xa.shape[1])
    init = metric.wpca_init(np.unique(np.vstack([xa, xb]), axis=0), dim, seed=args.seed)
    before = metric.mean_hinge_loss(metric.MetricModel(*init, cfg.bias, cfg.margin), xa, xb, y)
    model = metric.sgd_train(xa, xb, y, cfg, init=init, flips_a=fa, flips_b=fb)
    after = metric.mean_hinge_loss(model, xa, xb, y)
    model.save(args.out)
    print(f"metric d={model.dim} d0={model.input_dim}: mean hinge {before:.4f} -> {after:.4f}")
    _print_records({"dim": model.dim, "input_dim": model.input_dim, "loss_init": before,
                    "loss_final": after, "model": args.out})


def _report_verification(res):
    rep = res.report
    _print_table(["metric", "value"], [
        ["train accuracy", f"{res.train_accuracy:.4f}"],
        ["threshold", f"{rep.threshold:.6g}"],
        ["test accuracy", f"{rep.accuracy:.4f}"],
        ["ROC-EER", f"{rep.eer:.4f}"],
        ["1 - EER", f"{1 - rep.eer:.4f}"],
    ])
    _print_records({"train_accuracy": res.train_accuracy, **rep.records()})


def cmd_verify(args):
    train = harness.read_pairs(args.pairs)
    test = harness.read_pairs(args.test_pairs)
    method = "unsupervised" if args.unsupervised else "metric"
    sgd = metric.SgdConfig(rate=args.rate, n_iter=args.iters, seed=args.seed, bias=args.bias,
                           margin=args.margin, symmetric_v=args.symmetric_v)
    if args.desc:
        index, flips, meta = harness.load_descriptor_dir(args.desc)
        if args.no_flip:
            flips = None
        n_cells = meta.n_cells
        if args.metric:
            model = metric.MetricModel.load(args.metric)
            s_train = harness.score_pairs(index, train, model, n_cells, flips)
            threshold, train_acc = classify.verify_threshold(s_train, [p[2] for p in train])
            s_test = harness.score_pairs(index, test, model, n_cells, flips)
            rep = classify.verification_report(s_test, [p[2] for p in test], threshold)
            res = harness.VerificationResult(rep, train_acc, {}, model)
        else:
            res = harness.verify_descriptors(train, test, index, flips, n_cells, method, sgd, args.dim)
    else:
        if args.metric:
            raise ValueError("--metric needs precomputed descriptors (--desc)")
        cfg = _pipeline_config(args)
        res = harness.run_pair_protocol(train, test, cfg, method, sgd, args.dim, flip=not args.no_flip)
    _report_verification(res)


def cmd_bench(args):
    entries = harness.read_manifest(args.manifest)
    protocol = harness.Protocol(args.protocol, args.fraction, args.runs, args.seed)
    rows = []
    records = {}
    for kind in args.kinds.split(","):
        cfg = _pipeline_config(args, kind)
        images = harness.load_images([e.path for e in entries], cfg)
        t0 = time.perf_counter()
        agg = harness.run_protocol(entries, protocol, cfg, images=images)
        elapsed = time.perf_counter() - t0
        rows.append([kind, f"{100 * agg.mean_accuracy:.1f} +- {100 * agg.std_accuracy:.1f}",
                     len(agg.runs), f"{elapsed:.1f}s"])
        records.update({f"{kind}.{k}": v for k, v in agg.records().items()})
    _print_table(["descriptor", "accuracy (%)", "runs", "time"], rows)
    _print_records(records)


# --- parser ----------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="lhs", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic texture classes as PGM + manifest")
    _add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=64)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-gmm", help="fit the GMM and whitening statistics")
    _add_common(p)
    _add_pipeline(p, kinds=False)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True, help="GMM model file")
    p.add_argument("--stats", required=True, help="whitening statistics file")
    p.add_argument("images", nargs="*")
    p.set_defaults(func=cmd_train_gmm)

    p = sub.add_parser("encode", help="write descriptors for images")
    _add_common(p)
    _add_pipeline(p)
    p.add_argument("--model")
    p.add_argument("--stats")
    p.add_argument("--manifest")
    p.add_argument("--flip", action="store_true", help="also encode mirrored images")
    p.add_argument("--out", required=True)
    p.add_argument("images", nargs="*")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train-svm", help="train one-vs-rest linear SVMs on descriptors")
    _add_common(p)
    p.add_argument("--train", required=True, help="manifest")
    p.add_argument("--desc", required=True, help="descriptor directory")
    p.add_argument("--c", type=float, help="fixed C (skips cross-validation)")
    p.add_argument("--c-grid", type=_floats, default=classify.DEFAULT_C_GRID)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_svm)

    p = sub.add_parser("classify", help="train on one manifest, evaluate on another")
    _add_common(p)
    _add_pipeline(p)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--desc", help="use precomputed descriptors instead of images")
    p.add_argument("--svm", help="pretrained SVM model")
    p.add_argument("--c-grid", type=_floats, default=classify.DEFAULT_C_GRID)
    p.add_argument("--folds", type=int, default=5)
    p.set_defaults(func=cmd_classify)

    def add_sgd(p):
        p.add_argument("--dim", type=int, default=128)
        p.add_argument("--iters", type=int, default=1_000_000)
        p.add_argument("--rate", type=float, default=0.002)
        p.add_argument("--bias", type=float, default=1.0)
        p.add_argument("--margin", type=float, default=0.2)
        p.add_argument("--symmetric-v", action="store_true",
                       help="use the symmetric V gradient instead of the single-sided update")
        p.add_argument("--no-flip", action="store_true", help="ignore mirrored descriptors")

    p = sub.add_parser("train-metric", help="learn the joint metric from pairs")
    _add_common(p)
    add_sgd(p)
    p.add_argument("--pairs", required=True)
    p.add_argument("--desc", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_metric)

    p = sub.add_parser("verify", help="pair verification with threshold chosen on training pairs")
    _add_common(p)
    _add_pipeline(p)
    add_sgd(p)
    p.add_argument("--pairs", required=True, help="training pairs")
    p.add_argument("--test-pairs", required=True)
    p.add_argument("--desc", help="descriptor directory")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--metric", help="pretrained metric model")
    group.add_argument("--unsupervised", action="store_true", help="mean per-cell l2 distance")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="run a classification protocol over a manifest")
    _add_common(p)
    _add_pipeline(p, kinds=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--kinds", default="lhs,lbp,ltp")
    p.add_argument("--protocol", choices=("random-split", "leave-one-group-out"), default="random-split")
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--c-grid", type=_floats, default=classify.DEFAULT_C_GRID)
    p.set_defaults(func=cmd_bench)
    return parser


def _apply_config(parser, argv):
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cp = configparser.ConfigParser()
    if not cp.read(known.config):
        raise FileNotFoundError(known.config)
    command = next((a for a in argv if not a.startswith("-")), None)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sub = subparsers.choices.get(command)
    if sub is None:
        return
    values = {}
    for section in ("common", command):
        if cp.has_section(section):
            values.update(cp.items(section))
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, raw in values.items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None:
            raise ValueError(f"{known.config}: unknown option {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = cp.BOOLEAN_STATES[raw.lower()]
        elif action.type is not None:
            defaults[dest] = action.type(raw)
        else:
            defaults[dest] = raw
    sub.set_defaults(**defaults)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except (ValueError, FileNotFoundError) as exc:
        print(f"lhs: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(asctime)s %(name)s: %(message)s")
    if args.verbose:
        logging.getLogger("lhs").setLevel(logging.INFO)
    try:
        args.func(args)
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"lhs: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
