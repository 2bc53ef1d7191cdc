"""Command-line interface.

Exit codes: 0 success, 1 validation failure (e.g. a failed deploy-check),
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

from .config import PipelineConfig, load_config
from .deploy import export_lut, get_profile, manifest_json, validate_profile
from .errors import ContractError, ParseError, StateError
from .modelfile import load_model, save_model
from .pipeline import EVAL_FIELDS, RunContext, build_from_config, evaluate, run_pipeline, run_stage

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="snncompress", description="Compress and deploy spiking neural networks.")
    p.add_argument("--config", help="INI config file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override [run] seed")
    p.add_argument("--out-dir", default="out", help="directory for models, logs and reports (default: out)")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def model_cmd(name, help_text, required=True):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--model", required=required, help="input .snnc model file")
        return sp

    sp = sub.add_parser("train", help="train the FP32 spiking network")
    sp.add_argument("--output", help="model path (default: OUT_DIR/model.snnc)")

    sp = model_cmd("compress", "apply a compression method", required=False)
    sp.add_argument("method", choices=("cat", "cluster", "ternary"))
    sp.add_argument("--quantize", action="store_true", help="quantize CAT codebooks to [cat] bitwidth afterwards")
    sp.add_argument("--output")

    sp = model_cmd("prune", "structured channel pruning")
    sp.add_argument("criterion", choices=("fsc", "sca", "mag", "oracle"))
    sp.add_argument("--ratio", type=float, help="override [prune] ratio")
    sp.add_argument("--finetune", action="store_true", help="run the finetune stage after pruning")
    sp.add_argument("--output")

    sp = model_cmd("eval", "accuracy, F1 and deployability metrics")
    sp.add_argument("--repeats", type=int, help="override [run] eval_repeats")

    sp = model_cmd("deploy-check", "validate a model against a hardware profile")
    sp.add_argument("--profile", required=True)

    sp = model_cmd("export-lut", "write the codebook/index LUT file")
    sp.add_argument("--profile", help="profile whose limits apply (default: none)")
    sp.add_argument("--output", help="LUT path (default: OUT_DIR/model.lut)")

    sp = sub.add_parser("report-dr", help="DeployRatio CSV, one row per model")
    sp.add_argument("models", nargs="+")
    sp.add_argument("--repeats", type=int)

    sub.add_parser("pipeline", help="run every stage listed in [run] stages")
    return p


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.run.seed = args.seed
    return cfg.validate()


def _out(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path):
    if not Path(path).is_file():
        raise UsageError(f"model file not found: {path}")
    return load_model(path)


def _save(net, ctx, args, default="model.snnc"):
    path = Path(args.output) if getattr(args, "output", None) else ctx.out_dir / default
    save_model(net, path)
    (ctx.out_dir / "metrics.csv").write_text(ctx.log.to_csv())
    print(f"wrote {path}")


def cmd_train(args, cfg, out):
    ctx = RunContext.create(cfg, out)
    net = run_stage(build_from_config(cfg), "fp32-train", ctx)
    _save(net, ctx, args)
    return EXIT_OK


def cmd_compress(args, cfg, out):
    ctx = RunContext.create(cfg, out)
    if args.method == "cluster":
        net = run_stage(build_from_config(cfg), "cluster", ctx)
    else:
        if not args.model:
            raise UsageError(f"compress {args.method} needs --model")
        net = run_stage(_load(args.model), args.method, ctx)
        if args.quantize and args.method == "cat":
            net = run_stage(net, "quantize-codebook", ctx)
    _save(net, ctx, args)
    return EXIT_OK


def cmd_prune(args, cfg, out):
    cfg.prune.criterion = args.criterion
    if args.ratio is not None:
        cfg.prune.ratio = args.ratio
    cfg.validate()
    ctx = RunContext.create(cfg, out)
    net = run_stage(_load(args.model), "fsc-prune", ctx)
    if args.finetune:
        net = run_stage(net, "finetune", ctx)
    (out / "prune_report.json").write_text(json.dumps(ctx.prune_report.to_dict(), sort_keys=True, indent=1))
    print(ctx.prune_report.table())
    _save(net, ctx, args)
    return EXIT_OK


def _eval(net, cfg, repeats):
    test = RunContext.create(cfg).test
    return evaluate(net, test, repeats or cfg.run.eval_repeats, cfg, cfg.run.seed)


def cmd_eval(args, cfg, out):
    res = _eval(_load(args.model), cfg, args.repeats)
    for k in EVAL_FIELDS:
        std = f" +- {res.std[k]:.4g}" if res.std else ""
        print(f"{k:10s} {res.mean[k]:.6g}{std}")
    c = res.classification
    print(f"precision  {c.precision:.6g}\nrecall     {c.recall:.6g}")
    return EXIT_OK


def cmd_deploy_check(args, cfg, out):
    rep = validate_profile(_load(args.model), get_profile(args.profile))
    print(rep.table())
    print("PASS" if rep.passed else "FAIL")
    return EXIT_OK if rep.passed else EXIT_INVALID


def cmd_export_lut(args, cfg, out):
    profile = get_profile(args.profile) if args.profile else None
    path = Path(args.output) if args.output else out / "model.lut"
    try:
        manifest = export_lut(_load(args.model), path, profile)
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    Path(str(path) + ".json").write_text(manifest_json(manifest))
    print(f"wrote {path}")
    return EXIT_OK


REPORT_FIELDS = ("model",) + EVAL_FIELDS


def cmd_report_dr(args, cfg, out):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_FIELDS, lineterminator="\n")
    w.writeheader()
    for path in args.models:
        res = _eval(_load(path), cfg, args.repeats)
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in res.row(Path(path).name).items()})
    (out / "report_dr.csv").write_text(buf.getvalue())
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_pipeline(args, cfg, out):
    net, ctx = run_pipeline(cfg, out)
    print(f"wrote {out / 'model.snnc'} ({', '.join(net.provenance)})")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "compress": cmd_compress, "prune": cmd_prune, "eval": cmd_eval,
            "deploy-check": cmd_deploy_check, "export-lut": cmd_export_lut, "report-dr": cmd_report_dr,
            "pipeline": cmd_pipeline}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg, _out(args))
    except (UsageError, ContractError, ParseError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except StateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
