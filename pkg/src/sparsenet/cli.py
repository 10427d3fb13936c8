"""Command-line entry point.

Every subcommand writes its outputs plus ``manifest.json`` into ``--out``.
Files are written to a temporary name and renamed, so a failed run leaves
no partial CSVs.  ``sparsenet rerun --manifest <path>`` replays a run.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .combinatorics import MatchQuery, match_probability_exact, monte_carlo_binary, resolve_probe_size
from .experiments.checkpoint import CheckpointError, atomic_write_bytes, load_checkpoint, save_checkpoint
from .experiments.configs import ConfigError, load_config
from .experiments.mnist import DATA_DIR_ENV, IdxFormatError, default_data_dir, load_mnist, split_validation
from .experiments.network import build_network
from .experiments.noise import NoiseSpec
from .experiments.opcount import analytic_op_estimate, count_nonzero_products
from .experiments.training import evaluate, format_summary, noise_sweep, summarize, train, ResultsRecord
from .rng import generator_state, stream
from .scalar import ScalarMatchConfig, dimensionality_sweep, scale_sweep

log = logging.getLogger("sparsenet")

MANIFEST_VERSION = 1
VALIDATION_SIZE = 10_000


class CliError(Exception):
    pass


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _tokens(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _csv_bytes(header: list[str], rows) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(["" if v is None else repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue().encode()


class Run:
    """Collects output files and writes them with a manifest."""

    def __init__(self, args, argv):
        self.out = Path(args.out)
        self.subcommand = args.command
        self.argv = list(argv)
        self.seeds = {}
        self.config = getattr(args, "config", None)
        self.files = {}

    def write(self, name: str, data: bytes) -> Path:
        path = self.out / name
        atomic_write_bytes(path, data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def write_file_digest(self, name: str) -> None:
        self.files[name] = hashlib.sha256((self.out / name).read_bytes()).hexdigest()

    def finish(self) -> None:
        manifest = {
            "manifest_version": MANIFEST_VERSION,
            "package_version": __version__,
            "subcommand": self.subcommand,
            "argv": self.argv,
            "config": self.config,
            "seeds": self.seeds,
            "out": str(self.out),
            "files": dict(sorted(self.files.items())),
        }
        atomic_write_bytes(self.out / "manifest.json", (json.dumps(manifest, indent=2) + "\n").encode())


# -- theory ---------------------------------------------------------------------


def cmd_theory_binary(args, run: Run) -> None:
    if args.trials < 1:
        raise CliError("--trials must be >= 1")
    if any(n < 1 for n in args.n_list):
        raise CliError("--n-list entries must be positive")
    run.seeds["seed"] = args.seed
    rows = []
    for probe in args.a_probe:
        for n in args.n_list:
            try:
                a_probe = resolve_probe_size(probe, n)
            except ValueError:
                raise CliError(f"bad --a-probe entry {probe!r}")
            if a_probe > n or args.a_stored > n:
                continue
            q = MatchQuery(n, args.a_stored, a_probe, args.theta)
            exact = match_probability_exact(q)
            emp = monte_carlo_binary(q, args.trials, args.seed, workers=args.workers)
            rows.append([n, args.a_stored, a_probe, args.theta, exact.log10, emp.rate, emp.ci_low, emp.ci_high,
                         emp.trials])
            log.info("n=%d a=%d exact=10^%.3f empirical=%.3g", n, a_probe, exact.log10, emp.rate)
    header = ["n", "a_stored", "a_probe", "theta", "exact_log10", "empirical_rate", "ci_low", "ci_high", "trials"]
    run.write("theory_binary.csv", _csv_bytes(header, rows))


SCALAR_HEADER = ["n", "k_weight", "a_input", "scale", "theta", "rate", "ci_low", "ci_high", "trials"]


def cmd_theory_scalar(args, run: Run) -> None:
    if args.trials < 1:
        raise CliError("--trials must be >= 1")
    run.seeds["seed"] = args.seed
    dim_rows = []
    for token in args.a_list:
        for n in args.n_list:
            a = resolve_probe_size(token, n)
            if a > n or args.k > n:
                continue
            cfg = ScalarMatchConfig(n, args.k, a, scale=1.0, theta=args.theta)
            [(_, rate)] = dimensionality_sweep(cfg, [n], args.trials, args.seed, args.workers)
            dim_rows.append([n, args.k, a, 1.0, cfg.threshold, rate.rate, rate.ci_low, rate.ci_high, rate.trials])
    run.write("scalar_dimensionality.csv", _csv_bytes(SCALAR_HEADER, dim_rows))

    cfg = ScalarMatchConfig(args.scale_n, args.k, args.scale_a, scale=1.0, theta=args.theta)
    scale_rows = [
        [cfg.n, cfg.k_weight, cfg.a_input, s, cfg.threshold, r.rate, r.ci_low, r.ci_high, r.trials]
        for s, r in scale_sweep(cfg, args.scale_list, args.trials, args.seed, args.workers)
    ]
    run.write("scalar_scale.csv", _csv_bytes(SCALAR_HEADER, scale_rows))


# -- experiments ------------------------------------------------------------------


def _data_dir(args) -> Path:
    path = Path(args.data_dir) if args.data_dir else default_data_dir()
    if path is None:
        raise CliError(f"no --data-dir given and {DATA_DIR_ENV} is unset")
    return path


def _load(args, split: str):
    try:
        return load_mnist(_data_dir(args), split)
    except (FileNotFoundError, IdxFormatError) as exc:
        raise CliError(str(exc))


def cmd_train(args, run: Run) -> None:
    try:
        config = load_config(args.config)
    except ConfigError as exc:
        raise CliError(str(exc))
    sgd = config.training
    if args.epochs is not None:
        if args.epochs < 0:
            raise CliError("--epochs must be >= 0")
        sgd.epochs = args.epochs
    run.seeds["model_seed"] = args.seed
    train_set = _load(args, "train")
    test_set = _load(args, "test")
    validation = None
    if args.validation:
        train_set, validation = split_validation(train_set, VALIDATION_SIZE, stream(args.seed, "data", "split"))

    model_rng = stream(args.seed, "model")
    model = build_network(config, model_rng)
    result = train(model, sgd, train_set, args.seed, sparse=config.is_sparse, validation=validation)
    rows = [[e.epoch, e.lr, e.train_loss, e.val_acc] for e in result.history]
    if not rows:
        rows.append([0, sgd.lr_at(0), None, evaluate(model, validation) if validation else None])
    run.write("train_log.csv", _csv_bytes(["epoch", "lr", "train_loss", "val_acc"], rows))
    save_checkpoint(run.out / "checkpoint.npz", model, config, args.seed, sgd.epochs, generator_state(model_rng))
    run.write_file_digest("checkpoint.npz")
    print(f"{config.name}: test_acc={evaluate(model, test_set):.4f}")


def cmd_evaluate_noise(args, run: Run) -> None:
    try:
        model, config, meta = load_checkpoint(args.checkpoint, boost_at_inference=not args.no_boost_at_inference)
    except (OSError, CheckpointError) as exc:
        raise CliError(str(exc))
    run.config = str(args.checkpoint)
    run.seeds.update(model_seed=meta["seed"], eval_seed=args.eval_seed)
    train_set = _load(args, "train")
    test_set = _load(args, "test")
    spec = NoiseSpec.from_training(train_set.images)
    rec = noise_sweep(model, test_set, spec, args.eval_seed, config.name, meta["seed"])
    write_noise_results(run, [rec])
    print(f"{config.name}: test_acc={rec.test_acc:.4f} noise_score={rec.noise_score}")


def write_noise_results(run: Run, records: list[ResultsRecord]) -> None:
    levels = [[r.network, r.seed, eta, acc] for r in records for eta, acc in r.level_accuracy.items()]
    run.write("noise_levels.csv", _csv_bytes(["network", "seed", "eta", "accuracy"], levels))
    agg = [[r.network, r.seed, r.test_acc, r.noise_score] for r in records]
    run.write("noise_summary.csv", _csv_bytes(["network", "seed", "test_acc", "noise_score"], agg))


def cmd_count_ops(args, run: Run) -> None:
    if not args.config and not args.checkpoint:
        raise CliError("give --config and/or --checkpoint")
    empirical = {}
    config = None
    if args.checkpoint:
        try:
            model, config, _ = load_checkpoint(args.checkpoint)
        except (OSError, CheckpointError) as exc:
            raise CliError(str(exc))
        if args.samples < 1:
            raise CliError("--samples must be >= 1")
        test_set = _load(args, "test")
        batch = test_set.as_input()[: args.samples]
        empirical = {c.layer: c.per_sample for c in count_nonzero_products(model, batch)}
    if args.config:
        try:
            config = load_config(args.config)
        except ConfigError as exc:
            raise CliError(str(exc))
    baseline = None
    if args.baseline:
        try:
            baseline = load_config(args.baseline)
        except ConfigError as exc:
            raise CliError(str(exc))
    run.config = args.config or str(args.checkpoint)
    rows = []
    print(f"{config.name}  (baseline: {baseline.name if baseline else 'same layers, all dense'})")
    print(f"{'layer':<8}{'sparse':>14}{'dense':>14}{'ratio':>9}{'empirical':>14}")
    for est in analytic_op_estimate(config, baseline):
        emp = empirical.get(est.layer)
        rows.append([est.layer, est.sparse, est.dense, est.ratio, emp])
        print(f"{est.layer:<8}{est.sparse:>14,.0f}{est.dense:>14,.0f}{est.ratio:>8.2f}x"
              f"{'' if emp is None else f'{emp:>14,.0f}'}")
    run.write("ops.csv", _csv_bytes(["layer", "analytic_sparse", "analytic_dense", "ratio", "empirical_per_sample"], rows))


def cmd_summarize(args, run: Run) -> None:
    by_net: dict[str, list[ResultsRecord]] = {}
    for path in args.inputs:
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rec = ResultsRecord(row["network"], int(row["seed"]), float(row["test_acc"]), {},
                                    {0.0: int(row["noise_score"])})
                by_net.setdefault(rec.network, []).append(rec)
    lines = [f"{'Network':<20} {'Test Score':<14} Noise Score"]
    lines += [format_summary(summarize(recs)) for recs in by_net.values()]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    run.write("summary.txt", text.encode())


def cmd_rerun(args, argv_unused) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    if manifest.get("manifest_version") != MANIFEST_VERSION:
        raise CliError("unsupported manifest version")
    return main(manifest["argv"])


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sparsenet", description=__doc__.splitlines()[0])
    p.add_argument("--workers", type=int, default=1, help="parallel workers for Monte Carlo (1 = bit-reproducible)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("theory-binary", help="exact vs simulated match rates for binary vectors")
    b.add_argument("--n-list", type=_ints, default=_ints("100,200,300,400,500,750,1000,1500,2000"))
    b.add_argument("--a-stored", type=int, default=24)
    b.add_argument("--a-probe", type=_tokens, default=_tokens("24,48,64,n/2"),
                   help="probe activities; 'n/2' means half the dimensionality")
    b.add_argument("--theta", type=int, default=12)
    b.add_argument("--trials", type=int, default=100_000)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)

    s = sub.add_parser("theory-scalar", help="simulated false-match rates for scalar vectors")
    s.add_argument("--n-list", type=_ints, default=_ints("250,500,1000,1500,2000"))
    s.add_argument("--k", type=int, default=32)
    s.add_argument("--a-list", type=_tokens, default=_tokens("64,128,256,n/2"))
    s.add_argument("--scale-list", type=_floats, default=_floats("1,2,3,4,5,6,8,10"))
    s.add_argument("--scale-n", type=int, default=1000)
    s.add_argument("--scale-a", type=int, default=64)
    s.add_argument("--theta", type=float, default=None, help="override the default threshold 1/(6k)")
    s.add_argument("--trials", type=int, default=100_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train one network on MNIST")
    t.add_argument("--config", required=True, help="built-in config name or TOML path")
    t.add_argument("--data-dir", default=None, help=f"IDX directory (default ${DATA_DIR_ENV})")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--epochs", type=int, default=None)
    t.add_argument("--validation", action="store_true", help="hold out 10,000 training samples for validation")
    t.add_argument("--out", required=True)

    e = sub.add_parser("evaluate-noise", help="noise sweep of a trained checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data-dir", default=None)
    e.add_argument("--eval-seed", type=int, default=0)
    e.add_argument("--no-boost-at-inference", action="store_true")
    e.add_argument("--out", required=True)

    c = sub.add_parser("count-ops", help="nonzero-product accounting")
    c.add_argument("--config", default=None)
    c.add_argument("--checkpoint", default=None)
    c.add_argument("--baseline", default=None, help="dense config to compare against")
    c.add_argument("--data-dir", default=None)
    c.add_argument("--samples", type=int, default=100)
    c.add_argument("--out", required=True)

    m = sub.add_parser("summarize", help="mean ± std table from noise_summary.csv files")
    m.add_argument("inputs", nargs="+")
    m.add_argument("--out", required=True)

    r = sub.add_parser("rerun", help="repeat a run from its manifest")
    r.add_argument("--manifest", required=True)
    return p


COMMANDS = {
    "theory-binary": cmd_theory_binary,
    "theory-scalar": cmd_theory_scalar,
    "train": cmd_train,
    "evaluate-noise": cmd_evaluate_noise,
    "count-ops": cmd_count_ops,
    "summarize": cmd_summarize,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "rerun":
            return cmd_rerun(args, argv)
        if args.workers < 1:
            raise CliError("--workers must be >= 1")
        run = Run(args, argv)
        COMMANDS[args.command](args, run)
        run.finish()
    except (CliError, ValueError, OSError) as exc:
        print(f"sparsenet {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
