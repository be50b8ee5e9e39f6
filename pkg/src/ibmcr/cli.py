"""Command-line entry point: ``ibmcr <subcommand> ...``.

Exit codes: 0 success, 1 invalid input or config, 2 runtime failure,
3 a ``verify`` row failed.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from ibmcr import data as data_mod
from ibmcr import errors
from ibmcr import experiment as ex
from ibmcr.ib import DEFAULT_BETAS, format_report, random_instance, verify_special_case
from ibmcr.nn import read_trace
from ibmcr.plot import write_svg
from ibmcr.rates import (
    Partition,
    coding_rate,
    conditional_coding_rate,
    rate_reduction,
    read_features_bin,
    read_features_csv,
    to_bits,
)

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_CHECK = 0, 1, 2, 3

VALIDATION_ERRORS = (
    errors.ConfigError,
    errors.InputDomainError,
    errors.PartitionError,
    errors.FormatError,
    errors.ConsistencyError,
)


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_VALIDATION, f"error: usage: {message}\n")


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


def _one_line(exc):
    return " ".join(str(exc).split())


# -- verify --------------------------------------------------------------------


def _verify_cases(args):
    rng = np.random.default_rng(args.seed)
    for _ in range(args.instances):
        Z, part, eps = random_instance(rng, args.max_d, args.max_m, args.max_k)
        if args.k1:
            part = Partition(np.zeros(Z.shape[1], dtype=np.int64), 1)
        yield Z, part, eps
    for trace_dir in args.trace or ():
        meta, trace = read_trace(trace_dir)
        labels = np.asarray(meta["eval_labels"], dtype=np.int64)
        part = Partition.from_labels(labels, meta["num_classes"])
        for s in trace.snapshots:
            yield s.values, part, args.eps


def cmd_verify(args):
    betas = args.betas or list(DEFAULT_BETAS)
    rows = []
    for Z, part, eps in _verify_cases(args):
        rows.extend(verify_special_case(Z, part, eps, betas, delta_r_offset=args.corrupt_delta_r))
    report = format_report(rows)
    if args.report:
        Path(args.report).write_text(report)
    else:
        sys.stdout.write(report)
    failed = [r for r in rows if not r.passed]
    _log(f"verify: {len(rows) - len(failed)}/{len(rows)} rows PASS")
    if failed:
        r = failed[0]
        raise CheckFailed(
            f"beta={float(r.beta)!r} neg_delta_i={float(r.neg_delta_i)!r} delta_r={float(r.delta_r)!r} "
            f"residual={float(r.residual)!r} predicted={float(r.predicted)!r}"
        )
    return EXIT_OK


# -- rate ----------------------------------------------------------------------


def _read_labels(path):
    text = Path(path).read_text().replace(",", "\n").split()
    try:
        return np.array([int(v) for v in text], dtype=np.int64)
    except ValueError:
        raise errors.FormatError(f"{path}: labels must be integers") from None


def _rate_inputs(args):
    if args.trace:
        meta, trace = read_trace(args.trace)
        snaps = [s for s in trace.snapshots if s.epoch == args.epoch and s.layer == args.layer]
        if not snaps:
            raise errors.InputDomainError(f"no snapshot for epoch {args.epoch} layer {args.layer}")
        return snaps[0].values, np.asarray(meta["eval_labels"], dtype=np.int64)
    if args.features:
        path = str(args.features)
        Z = read_features_bin(path) if path.endswith(".bin") else read_features_csv(path)
        labels = _read_labels(args.labels) if args.labels else None
        return Z, labels
    if args.dataset_csv:
        ds = data_mod.import_csv(args.dataset_csv, args.num_classes)
        return ds.features, ds.labels
    ds = data_mod.gen_szt()
    return ds.features, ds.labels


def cmd_rate(args):
    Z, labels = _rate_inputs(args)
    if args.single_class or labels is None:
        part = Partition(np.zeros(Z.shape[1], dtype=np.int64), 1)
    else:
        part = Partition.from_labels(labels)
    r = coding_rate(Z, args.eps, center=args.center)
    rc = conditional_coding_rate(Z, part, args.eps, center=args.center)
    dr = rate_reduction(Z, part, args.eps, center=args.center)
    for name, v in (("R", r), ("Rc", rc), ("dR", dr)):
        print(f"{name}\t{float(v)!r} nats\t{float(to_bits(v))!r} bits")
    return EXIT_OK


# -- train / infoplane / plot / repro ------------------------------------------


def _progress(seed, m):
    _log(f"seed={seed} epoch={m.epoch} loss={m.loss:.6f} train_acc={m.train_acc:.4f} test_acc={m.test_acc:.4f}")


def _final_metrics(trace_dirs):
    out = {}
    for d in trace_dirs:
        lines = (Path(d) / "metrics.csv").read_text().splitlines()
        e, loss, tr, te = lines[-1].split(",")
        out[Path(d).name] = {"epoch": int(e), "loss": float(loss), "train_acc": float(tr), "test_acc": float(te)}
    return out


def train_stage(cfg, out_dir, quiet=False):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.yaml").write_text(cfg.to_yaml())
    return ex.run_training(cfg, out_dir / "traces", progress=None if quiet else _progress)


def infoplane_stage(trace_dirs, csv_path, binning=None):
    per_seed, averaged = ex.build_infoplane(trace_dirs, binning)
    Path(csv_path).write_text(ex.format_infoplane_csv(per_seed, averaged))
    return per_seed, averaged


def plot_stage(csv_path, svg_path, which="mean", title=""):
    per_seed, averaged = ex.read_infoplane_csv(csv_path)
    if which == "mean":
        points = averaged or per_seed
    else:
        points = [p for p in per_seed if p.seed == int(which)]
    if not points:
        raise errors.InputDomainError(f"{csv_path}: no information-plane points to plot")
    widths = _widths_from_sidecar(csv_path)
    write_svg(points, svg_path, widths, title)
    return svg_path


def _widths_from_sidecar(csv_path):
    cfg_path = Path(csv_path).parent / "config.yaml"
    if not cfg_path.exists():
        return None
    try:
        return list(ex.load_config(cfg_path).model.hidden_widths)
    except errors.ConfigError:
        return None


def cmd_train(args):
    cfg = ex.load_config(args.config, args.set)
    out = Path(args.out) if args.out else ex.output_root(cfg) / cfg.name
    dirs = train_stage(cfg, out, quiet=args.quiet)
    print(json.dumps({"output": str(out), "traces": [str(d) for d in dirs],
                      "final": _final_metrics(dirs)}, sort_keys=True))
    return EXIT_OK


def _binning_from_args(args):
    if args.range_mode is None and args.bins is None:
        return None
    return ex.BinningSpec(args.bins or 30, args.range_mode, args.lo, args.hi)


def cmd_infoplane(args):
    per_seed, averaged = infoplane_stage(args.traces, args.out, _binning_from_args(args))
    print(json.dumps({"output": str(args.out), "points": len(per_seed),
                      "averaged_points": len(averaged)}, sort_keys=True))
    return EXIT_OK


def cmd_plot(args):
    out = args.out or str(Path(args.csv).with_suffix(".svg"))
    plot_stage(args.csv, out, args.which, args.title or "")
    print(json.dumps({"output": out}))
    return EXIT_OK


def run_panel(cfg, out_dir, quiet=False):
    """train -> infoplane -> plot -> summary for one configured panel."""
    out_dir = Path(out_dir)
    dirs = train_stage(cfg, out_dir, quiet)
    per_seed, averaged = infoplane_stage(dirs, out_dir / "infoplane.csv")
    plot_stage(out_dir / "infoplane.csv", out_dir / "infoplane.svg", title=cfg.name)
    summary = ex.summarize(per_seed, averaged, _final_metrics(dirs))
    summary["panel"] = cfg.name
    summary["hidden_widths"] = list(cfg.model.hidden_widths)
    summary["activation"] = cfg.model.activation
    ex.write_json(out_dir / "summary.json", summary)
    return summary


def cmd_repro(args):
    cfg = ex.load_config(args.config) if args.config else ex.panel_config(args.panel, args.mnist_dir)
    raw = cfg.to_dict()
    for item in args.set:
        if "=" not in item:
            raise errors.ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        ex.set_dotted(raw, key.strip(), yaml.safe_load(value))
    if args.seeds:
        raw["seeds"] = args.seeds
    if args.epochs is not None:
        raw["model"]["epochs"] = args.epochs
    cfg = ex.ExperimentConfig.from_dict(raw).validate()
    out = Path(args.out) if args.out else ex.output_root(cfg) / cfg.name
    summary = run_panel(cfg, out, args.quiet)
    print(json.dumps({"output": str(out), "averaged": summary["averaged"]}, sort_keys=True))
    return EXIT_OK


def cmd_gen_data(args):
    ds = data_mod.gen_szt(args.gamma, args.noise_seed)
    data_mod.export_csv(ds, args.out)
    print(json.dumps({"output": str(args.out), "samples": int(ds.num_samples),
                      "positive_fraction": float(ds.labels.mean()), "checksum": ds.checksum}))
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser():
    p = _Parser(prog="ibmcr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("verify", help="check that -Delta I / beta converges to Delta R at rate R / beta")
    v.add_argument("--instances", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--max-d", type=int, default=16)
    v.add_argument("--max-m", type=int, default=64)
    v.add_argument("--max-k", type=int, default=4)
    v.add_argument("--k1", action="store_true", help="put all samples in one class")
    v.add_argument("--betas", type=float, nargs="+")
    v.add_argument("--eps", type=float, default=0.5, help="precision used for trace snapshots")
    v.add_argument("--trace", nargs="*", help="also check every snapshot in these trace directories")
    v.add_argument("--corrupt-delta-r", type=float, default=0.0, help="fault injection for self-tests")
    v.add_argument("--report", help="write the CSV report here instead of stdout")
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("rate", help="print R, Rc and Delta R in nats and bits")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--features", help="feature matrix (.csv one sample per row, or .bin)")
    src.add_argument("--dataset-csv", help="dataset CSV with trailing label column")
    src.add_argument("--trace", help="trace directory")
    r.add_argument("--labels", help="integer labels, one per sample (with --features)")
    r.add_argument("--num-classes", type=int, default=2)
    r.add_argument("--epoch", type=int, default=0)
    r.add_argument("--layer", type=int, default=0)
    r.add_argument("--eps", type=float, default=0.5)
    r.add_argument("--center", action="store_true", help="subtract per-feature sample mean first")
    r.add_argument("--single-class", action="store_true")
    r.set_defaults(func=cmd_rate)

    t = sub.add_parser("train", help="train one network per seed and write trace directories")
    t.add_argument("--config")
    t.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    t.add_argument("--out")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infoplane", help="binning MI estimates for trace directories")
    i.add_argument("traces", nargs="+")
    i.add_argument("--out", default="infoplane.csv")
    i.add_argument("--bins", type=int)
    i.add_argument("--range-mode", choices=("fixed", "per_layer_observed", "global_observed"))
    i.add_argument("--lo", type=float, default=-1.0)
    i.add_argument("--hi", type=float, default=1.0)
    i.set_defaults(func=cmd_infoplane)

    pl = sub.add_parser("plot", help="render an infoplane CSV as SVG")
    pl.add_argument("csv")
    pl.add_argument("--out")
    pl.add_argument("--which", default="mean", help="'mean' or a seed number")
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)

    rp = sub.add_parser("repro", help="full pipeline for one information-plane panel")
    rp.add_argument("panel", choices=sorted(ex.PANELS))
    rp.add_argument("--config")
    rp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    rp.add_argument("--seeds", type=int, nargs="+")
    rp.add_argument("--epochs", type=int)
    rp.add_argument("--mnist-dir")
    rp.add_argument("--out")
    rp.add_argument("--quiet", action="store_true")
    rp.set_defaults(func=cmd_repro)

    g = sub.add_parser("gen-data", help="export the synthetic 12-bit dataset as CSV")
    g.add_argument("--out", required=True)
    g.add_argument("--noise-seed", type=int, default=0)
    g.add_argument("--gamma", type=float)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CheckFailed as exc:
        _log(f"error: check_failed: {_one_line(exc)}")
        return EXIT_CHECK
    except VALIDATION_ERRORS as exc:
        _log(f"error: {type(exc).__name__}: {_one_line(exc)}")
        return EXIT_VALIDATION
    except (errors.TrainingDivergedError, errors.NumericError, OSError, KeyError, ValueError) as exc:
        _log(f"error: {type(exc).__name__}: {_one_line(exc)}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
