import argparse
import json
import sys
from datetime import datetime
from pathlib import Path

import pandas as pd

from src import config
from src.api.dataset_api import Cifar100Source
from src.data.cifar import PreprocessedImages, fit_zca, gcn, read_cifar100
from src.data.sampling import build_data_matrix, make_rng
from src.data.storage import (
    load_data_matrix,
    load_model,
    load_zca,
    save_data_matrix,
    save_model,
    save_table,
    save_zca,
    write_run_manifest,
)
from src.errors import ChannelfoldError, FormatError, UsageError
from src.model.forward import eval_classifier
from src.model.nin import build_nin_style
from src.pruning.fold import MODES, PruneSpec, ablation_curve, prune_layer
from src.pruning.pipeline import prune_bottom_up
from src.pruning.select import SolverConfig, importance_report, solve_group_sparse
from src.utils.charts import generate_ablation_chart, generate_importance_chart, write_chart
from src.utils.costs import compare_costs, cost_model, report_dict, report_frame
from src.utils.logging import configure_logging, log_debug, log_info


# recorded in run manifests but not replayable as options
RUN_ONLY_KEYS = ("command", "config")


class ArgumentParser(argparse.ArgumentParser):
    """argparse that raises UsageError (exit 1) instead of exiting with 2"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text):
    if isinstance(text, list):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def _name_list(text):
    if isinstance(text, list):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _require(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) in (None, "")]
    if missing:
        raise UsageError(f"{args.command}: missing required option(s): {', '.join(missing)}")


def _params(args):
    return {k: v for k, v in vars(args).items() if k != "handler"}


def _now():
    return datetime.now().isoformat(timespec="seconds")


def _solver_config(args):
    return SolverConfig(
        lambda_rel=args.lambda_rel,
        rho=args.rho,
        max_iters=args.max_iters,
        tol_primal=args.tol,
        tol_dual=args.tol,
    )


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n")
    return path


def _images(args):
    records = read_cifar100(args.data, args.split)
    zca = load_zca(args.zca) if args.zca else None
    return PreprocessedImages(records, zca)


def cmd_download(args):
    directory, error = Cifar100Source().fetch(force=args.force)
    if error:
        raise FormatError(error)
    print(directory)
    return 0


def cmd_init_nin(args):
    _require(args, "out")
    started = _now()
    graph = build_nin_style(num_classes=args.classes, seed=args.seed)
    save_model(graph, args.out)
    write_run_manifest(args.out, args.command, _params(args), started)
    print(f"Wrote NIN-style model (random weights, untrained) to {args.out}")
    return 0


def cmd_fit_zca(args):
    _require(args, "data", "out")
    started = _now()
    records = read_cifar100(args.data, args.split)
    count = min(args.n, len(records))
    picks = make_rng(args.seed).choice(len(records), size=count, replace=False)
    transform = fit_zca([gcn(records[int(i)].pixels) for i in picks], relative_epsilon=args.epsilon_rel)
    save_zca(transform, args.out)
    write_run_manifest(Path(args.out) / "zca.json", args.command, _params(args), started)
    print(f"Fitted ZCA on {count} images (epsilon={transform.epsilon:.4g}) -> {args.out}")
    return 0


def cmd_capture(args):
    _require(args, "model", "data", "layer", "out")
    started = _now()
    graph = load_model(args.model)
    dm = build_data_matrix(graph, args.layer, _images(args), args.n, args.seed)
    save_data_matrix(dm, args.out)
    write_run_manifest(args.out, args.command, _params(args), started)
    print(f"{args.layer}: {dm.rows} x {dm.cols} -> {args.out}")
    return 0


def cmd_importance(args):
    _require(args, "matrix", "out_csv")
    started = _now()
    dm = load_data_matrix(args.matrix)
    coefficients = solve_group_sparse(dm, _solver_config(args))
    report = importance_report(coefficients, dm.layer)
    save_table(report.to_frame(), args.out_csv)
    if args.out_html:
        write_chart(generate_importance_chart(report), args.out_html)
    write_run_manifest(args.out_csv, args.command, _params(args), started)
    print(f"{dm.layer}: ranked {report.factors.size} channels "
          f"({'converged' if coefficients.converged else 'not converged'}, {coefficients.iters_used} iterations)")
    return 0


def cmd_prune(args):
    _require(args, "model", "matrix", "k", "out_model", "out_json")
    started = _now()
    graph = load_model(args.model)
    dm = load_data_matrix(args.matrix)
    layer = args.layer or dm.layer
    if layer != dm.layer:
        raise UsageError(f"--layer {layer} but the data matrix was captured at {dm.layer}")

    report = importance_report(solve_group_sparse(dm, _solver_config(args)), layer)
    result = prune_layer(graph, PruneSpec(layer, args.k, args.mode, report), dm)
    save_model(result.model, args.out_model)
    summary = result.summary(args.mode, lambda_rel=args.lambda_rel, seed=dm.seed)
    _write_json(args.out_json, summary)
    write_run_manifest(args.out_json, args.command, _params(args), started)
    print(f"{layer}: removed {summary['K']} channels ({args.mode}), recon_error={summary['recon_error']:.6g}")
    return 0


def cmd_ablate(args):
    _require(args, "matrix", "ks", "out_csv")
    started = _now()
    dm = load_data_matrix(args.matrix)
    report = importance_report(solve_group_sparse(dm, _solver_config(args)), dm.layer)
    rows = ablation_curve(dm, report, _int_list(args.ks))
    save_table(ablation_frame(rows), args.out_csv)
    if args.out_html:
        write_chart(generate_ablation_chart(rows, dm.layer), args.out_html)
    write_run_manifest(args.out_csv, args.command, _params(args), started)
    for row in rows:
        print(f"K={row['K']}: bottom={row['recon_error_bottom']:.6g} top={row['recon_error_top']:.6g}")
    return 0


def ablation_frame(rows):
    return pd.DataFrame(rows, columns=["K", "recon_error_bottom", "recon_error_top"])


def cmd_pipeline(args):
    _require(args, "model", "data", "layers", "ks", "out_dir")
    started = _now()
    layers = _name_list(args.layers)
    ks = _int_list(args.ks)
    if len(layers) != len(ks):
        raise UsageError(f"--layers has {len(layers)} entries but --ks has {len(ks)}")

    out_dir = Path(args.out_dir)
    graph = load_model(args.model)
    model, outcomes = prune_bottom_up(
        graph, list(zip(layers, ks)), _images(args), args.n, args.seed, _solver_config(args), args.mode
    )
    for outcome in outcomes:
        name = outcome.result.layer
        save_table(outcome.report.to_frame(), out_dir / f"importance_{name}.csv")
        _write_json(out_dir / f"prune_{name}.json", outcome.result.summary(args.mode, args.lambda_rel, args.seed))
    save_model(model, out_dir / "model.json")
    comparison = compare_costs(cost_model(graph), cost_model(model))
    save_table(report_frame(comparison), out_dir / "cost_report.csv")
    write_run_manifest(out_dir / "model.json", args.command, _params(args), started)
    print(report_frame(comparison).to_string(index=False))
    return 0


def cmd_report(args):
    _require(args, "baseline")
    started = _now()
    baseline = cost_model(load_model(args.baseline))
    report = compare_costs(baseline, cost_model(load_model(args.pruned))) if args.pruned else baseline
    for flag in report.discrepancies:
        log_info(f"{flag['flag']}: {flag['quantity']} {flag['column']} computed {flag['computed']}, "
                 f"published {flag['reference']}")

    if args.format == "xlsx":
        if not args.out:
            raise UsageError("--format xlsx needs --out")
        out = save_table(report_frame(report), Path(args.out).with_suffix(".xlsx"))
        write_run_manifest(out, args.command, _params(args), started)
        return 0
    if args.format == "json":
        text = json.dumps(report_dict(report), indent=2) + "\n"
    else:
        text = report_frame(report).to_csv(index=False)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        write_run_manifest(out, args.command, _params(args), started)
    else:
        sys.stdout.write(text)
    return 0


def cmd_eval(args):
    _require(args, "model", "data")
    graph = load_model(args.model)
    images = _images(args)
    if args.limit:
        images = PreprocessedImages(images.records[: args.limit], images.zca)
    accuracy = eval_classifier(graph, images.labelled())
    print(f"accuracy: {accuracy:.4f} ({len(images)} images)")
    return 0


def build_parser():
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file supplying any option; the command line wins")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING")

    solver = ArgumentParser(add_help=False)
    solver.add_argument("--lambda-rel", type=float, default=config.LAMBDA_REL)
    solver.add_argument("--rho", type=float, default=config.RHO)
    solver.add_argument("--max-iters", type=int, default=config.MAX_ITERS)
    solver.add_argument("--tol", type=float, default=config.TOL)

    sampling = ArgumentParser(add_help=False)
    sampling.add_argument("--data", help="CIFAR-100 binary file or directory")
    sampling.add_argument("--split", default="train", choices=["train", "test"])
    sampling.add_argument("--zca", help="directory written by fit-zca")
    sampling.add_argument("--n", type=int, default=config.N_SAMPLE)
    sampling.add_argument("--seed", type=int, default=config.SEED)

    parser = ArgumentParser(prog="channelfold", description="Prune CNN channels by sparse self-reconstruction")
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)
    commands = {}

    def command(name, handler, parents=(), help=None):
        p = sub.add_parser(name, parents=[common, *parents], help=help)
        p.set_defaults(handler=handler)
        commands[name] = p
        return p

    p = command("download", cmd_download, help="fetch the CIFAR-100 binary release")
    p.add_argument("--force", action="store_true")

    p = command("init-nin", cmd_init_nin, help="write an untrained NIN-style model")
    p.add_argument("--out")
    p.add_argument("--classes", type=int, default=100)
    p.add_argument("--seed", type=int, default=config.SEED)

    p = command("fit-zca", cmd_fit_zca, help="fit ZCA whitening on GCN'd training images")
    p.add_argument("--data")
    p.add_argument("--split", default="train", choices=["train", "test"])
    p.add_argument("--n", type=int, default=config.ZCA_FIT_COUNT)
    p.add_argument("--seed", type=int, default=config.SEED)
    p.add_argument("--epsilon-rel", type=float, default=config.ZCA_EPSILON_REL)
    p.add_argument("--out")

    p = command("capture", cmd_capture, [sampling], help="sample activations into a data matrix")
    p.add_argument("--model")
    p.add_argument("--layer")
    p.add_argument("--out")

    p = command("importance", cmd_importance, [solver], help="rank channels of a data matrix")
    p.add_argument("--matrix")
    p.add_argument("--out-csv")
    p.add_argument("--out-html")

    p = command("prune", cmd_prune, [solver], help="prune one layer and fold the repair")
    p.add_argument("--model")
    p.add_argument("--matrix")
    p.add_argument("--layer")
    p.add_argument("--k", type=int)
    p.add_argument("--mode", default="bottom", choices=MODES)
    p.add_argument("--out-model")
    p.add_argument("--out-json")

    p = command("ablate", cmd_ablate, [solver], help="bottom- vs top-ranked removal errors")
    p.add_argument("--matrix")
    p.add_argument("--ks")
    p.add_argument("--out-csv")
    p.add_argument("--out-html")

    p = command("pipeline", cmd_pipeline, [sampling, solver], help="prune several layers bottom-up")
    p.add_argument("--model")
    p.add_argument("--layers")
    p.add_argument("--ks")
    p.add_argument("--mode", default="bottom", choices=MODES)
    p.add_argument("--out-dir")

    p = command("report", cmd_report, help="parameter and multiplication counts")
    p.add_argument("--baseline")
    p.add_argument("--pruned")
    p.add_argument("--format", default="csv", choices=["csv", "json", "xlsx"])
    p.add_argument("--out")

    p = command("eval", cmd_eval, [sampling], help="top-1 accuracy on a CIFAR-100 split")
    p.add_argument("--model")
    p.add_argument("--limit", type=int)
    p.set_defaults(split="test")

    return parser, commands


def load_config_file(path, command=None):
    """Option values from a plain JSON object or from a run manifest's params"""
    path = Path(path)
    if not path.exists():
        raise UsageError(f"config file not found: {path}")
    try:
        values = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}:{e.lineno}: {e.msg}") from e
    if not isinstance(values, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    if "params" in values and "command" in values:
        if command and values["command"] != command:
            raise UsageError(f"{path}: run manifest is for '{values['command']}', not '{command}'")
        params = values["params"]
        if not isinstance(params, dict):
            raise UsageError(f"{path}: run manifest params must be a JSON object")
        values = {k: v for k, v in params.items() if k not in RUN_ONLY_KEYS}
    return {key.replace("-", "_"): value for key, value in values.items()}


def parse_args(argv=None):
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        raise UsageError(parser.format_usage().strip())
    if args.config:
        overrides = load_config_file(args.config, args.command)
        known = {action.dest for action in commands[args.command]._actions}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise UsageError(f"{args.config}: unknown option(s) for {args.command}: {', '.join(unknown)}")
        commands[args.command].set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def main(argv=None):
    """Main application function"""
    try:
        args = parse_args(argv)
        configure_logging(args.log_level)
        log_debug(f"Running {args.command} with {_params(args)}")
        return args.handler(args)
    except ChannelfoldError as e:
        configure_logging()
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
