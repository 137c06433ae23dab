"""Command-line interface: ``pkb fit | predict | simulate | evaluate``.

Every subcommand accepts ``--config FILE`` with ``key=value`` lines whose
keys are the long flag names (dashes or underscores). Values from the file
are parsed exactly like flags, and flags given on the command line win.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from .boosting import (
    AUTO,
    FitConfig,
    fit,
    fit_with_cv,
    load_model,
    pathway_weights,
    predict,
    save_model,
)
from .data import load_expression_csv, load_gmt, load_labels, write_expression_csv, write_gmt, write_labels
from .errors import PKBError
from .evaluation import evaluate, write_evaluation, write_weights
from .kernels import KernelSpec
from .simulation import SimSpec, generate

logger = logging.getLogger("pkb")

KERNELS = {"rbf": "rbf", "poly3": "poly3", "linear": "linear"}
OUTCOME_RULES = {"bernoulli": "bernoulli_logistic", "sign": "deterministic_sign"}


class CLIError(Exception):
    """A user-facing failure reported as a one-line diagnostic."""


# --- argument parsing --------------------------------------------------------

def _lambda_arg(text: str):
    if text.strip().lower() == AUTO:
        return AUTO
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number or 'auto', got {text!r}")
    if not value > 0:
        raise argparse.ArgumentTypeError("lambda must be positive")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; command-line flags override it")
    p.add_argument("--out-dir", default=".", help="directory for outputs (default: .)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quiet", action="store_true", help="only log warnings and errors")


def _add_inputs(p: argparse.ArgumentParser, labels: bool = True) -> None:
    p.add_argument("--expression", required=True, help="expression CSV")
    p.add_argument("--genes-as-rows", action="store_true",
                   help="expression CSV has genes as rows and samples as columns")
    if labels:
        p.add_argument("--pathways", required=True, help="pathway GMT file")
        p.add_argument("--labels", required=True, help="labels CSV: sample_id,label")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--penalty", choices=("l1", "l2"), default="l1")
    p.add_argument("--kernel", choices=tuple(KERNELS), default="rbf")
    p.add_argument("--lambda", dest="lam", type=_lambda_arg, default=AUTO,
                   help="penalty weight or 'auto' (default)")
    p.add_argument("--lambda-factor", type=float, default=1.0,
                   help="multiplier applied to the resolved lambda")
    p.add_argument("--nu", type=float, default=0.05, help="learning rate in (0, 1]")
    p.add_argument("--max-iters", type=_positive_int, default=500,
                   help="largest iteration count considered by cross-validation")
    p.add_argument("--inner-folds", type=_positive_int, default=3)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pkb", description="Pathway-based kernel boosting.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="train a model")
    _add_inputs(p)
    _add_training(p)
    p.add_argument("--iters", type=_positive_int,
                   help="train for exactly this many iterations instead of choosing by CV")
    p.add_argument("--model-out", help="model JSON (default: OUT_DIR/model.json)")
    _add_common(p)

    p = sub.add_parser("predict", help="score new samples with a saved model")
    _add_inputs(p, labels=False)
    p.add_argument("--model-in", required=True, help="model JSON written by 'fit'")
    p.add_argument("--predictions-out", help="output CSV (default: OUT_DIR/predictions.csv)")
    _add_common(p)

    p = sub.add_parser("simulate", help="write a synthetic dataset")
    p.add_argument("--sim-model", type=int, choices=(1, 2, 3), default=1)
    p.add_argument("--sim-pathways", type=_positive_int, default=50)
    p.add_argument("--sim-pathway-size", type=_positive_int, default=5)
    p.add_argument("--sim-n", type=_positive_int, default=900)
    p.add_argument("--outcome-rule", choices=tuple(OUTCOME_RULES), default="bernoulli")
    _add_common(p)

    p = sub.add_parser("evaluate", help="outer cross-validated test error and pathway weights")
    _add_inputs(p)
    _add_training(p)
    p.add_argument("--outer-folds", type=_positive_int, default=3)
    _add_common(p)
    return parser


def read_config(path) -> list[str]:
    """Turn a ``key=value`` file into flag tokens."""
    tokens = []
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CLIError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise CLIError(f"{path}, line {lineno}: expected key=value")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            tokens.extend([flag, value])
    return tokens


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    argv = list(argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config and argv and not argv[0].startswith("-"):
        # file values go first so later command-line flags override them
        argv = [argv[0], *read_config(known.config), *argv[1:]]
    return parser.parse_args(argv)


# --- helpers -----------------------------------------------------------------

def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise CLIError(f"{what} file not found: {path}")
    return p


def _load_expression(args):
    path = _require_file(args.expression, "expression")
    return load_expression_csv(path, samples_as_rows=not args.genes_as_rows)


def _load_training_inputs(args):
    data = _load_expression(args)
    pathways = load_gmt(_require_file(args.pathways, "pathways"), data)
    labels = load_labels(_require_file(args.labels, "labels"), data)
    return data, pathways, labels


def _fit_config(args, T: int) -> FitConfig:
    return FitConfig(
        penalty=args.penalty, lam=args.lam, nu=args.nu, T=T,
        cv_folds_inner=args.inner_folds, kernel=KernelSpec.from_name(KERNELS[args.kernel]),
        seed=args.seed, lambda_factor=args.lambda_factor,
    )


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- subcommands ---------------------------------------------------------------

def cmd_fit(args) -> int:
    data, pathways, labels = _load_training_inputs(args)
    out = _out_dir(args)
    if args.iters is not None:
        model = fit(data, pathways, labels, _fit_config(args, args.iters))
    else:
        result = fit_with_cv(data, pathways, labels, _fit_config(args, args.max_iters))
        model = result.model
        with (out / "cv_curve.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "mean_heldout_loss"])
            for t, v in enumerate(result.cv.mean_curve, start=1):
                w.writerow([t, repr(float(v))])
    model_path = Path(args.model_out) if args.model_out else out / "model.json"
    save_model(model, model_path)
    write_weights(pathway_weights(model), out / "pathway_weights.csv")
    logger.info("model written to %s after %d iterations", model_path, model.n_iterations)
    return 0


def cmd_predict(args) -> int:
    model = load_model(_require_file(args.model_in, "model"))
    data = _load_expression(args)
    scores, labels = predict(model, data)
    path = Path(args.predictions_out) if args.predictions_out else _out_dir(args) / "predictions.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "score", "label"])
        for sid, s, lab in zip(data.sample_ids, scores, labels):
            w.writerow([sid, repr(float(s)), int(lab)])
    logger.info("%d predictions written to %s", data.n_samples, path)
    return 0


def cmd_simulate(args) -> int:
    spec = SimSpec(model_id=args.sim_model, M_total=args.sim_pathways,
                   pathway_size=args.sim_pathway_size, N=args.sim_n, seed=args.seed,
                   outcome_rule=OUTCOME_RULES[args.outcome_rule])
    sim = generate(spec)
    out = _out_dir(args)
    write_expression_csv(sim.dataset, out / "expression.csv")
    write_gmt(sim.pathways, sim.dataset.gene_ids, out / "pathways.gmt")
    write_labels(sim.labels, sim.dataset.sample_ids, out / "labels.csv")
    truth = {
        "model": spec.model_id,
        "seed": spec.seed,
        "n_samples": spec.N,
        "n_pathways": spec.M_total,
        "pathway_size": spec.pathway_size,
        "outcome_rule": spec.outcome_rule,
        "relevant_indices": sim.relevant,
        "relevant_pathways": [sim.pathways.names[m] for m in sim.relevant],
    }
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=1) + "\n", encoding="utf-8")
    logger.info("simulated model %d data written to %s", spec.model_id, out)
    return 0


def cmd_evaluate(args) -> int:
    data, pathways, labels = _load_training_inputs(args)
    result = evaluate(data, pathways, labels, _fit_config(args, args.max_iters),
                      outer_folds=args.outer_folds)
    folds_path, _ = write_evaluation(result, _out_dir(args))
    logger.info("mean test error %.12g (report in %s)", result.mean_error, folds_path)
    return 0


def _configure_logging(quiet: bool) -> None:
    # one stderr handler on the package logger, replaced on every call
    for h in [h for h in logger.handlers if getattr(h, "_pkb_cli", False)]:
        logger.removeHandler(h)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    handler._pkb_cli = True
    logger.addHandler(handler)
    logger.setLevel(logging.WARNING if quiet else logging.INFO)


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "simulate": cmd_simulate,
            "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args = parse_args(argv)
    except CLIError as exc:
        print(f"pkb: error: {exc}", file=sys.stderr)
        return 2
    _configure_logging(args.quiet)
    try:
        return COMMANDS[args.command](args)
    except (PKBError, CLIError, ValueError, OSError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"pkb: error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
