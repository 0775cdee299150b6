"""``trendlab`` command line: prepare, synth, train, sweep, attend.

Exit codes: 0 success, 2 configuration or validation error, 3 training
aborted on a non-finite loss or gradient. Outputs go to ``--out`` or, by
default, to ``$TRENDLAB_OUT`` (else ``./runs``) under a directory named
from the current time and seed.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import yaml

from . import __version__
from .data import DataConfig, SplitSpec, SynthConfig, load_panel, make_samples, panel_from_csvs
from .data import save_panel, split, synthesize, write_csv
from .errors import TrainingAborted, TrendlabError, UnsupportedModelError
from .evaluation import evaluate
from .export import export_csv, record_traces, render_entry
from .models import KINDS, Model, ModelConfig, read_checkpoint, save_checkpoint
from .sweep import parse_grid, sweep
from .training import RunManifest, TrainConfig, train

log = logging.getLogger("trendlab")

OUT_ENV = "TRENDLAB_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_TRAIN = 0, 2, 3


class CliError(TrendlabError):
    pass


def _date_range(text):
    try:
        a, b = text.split(":")
        return (dt.date.fromisoformat(a), dt.date.fromisoformat(b))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected START:END with ISO dates, got {text!r}") from None


def _run_dir(args, seed):
    if args.out:
        out = Path(args.out)
    else:
        root = Path(os.environ.get(OUT_ENV, "runs"))
        stamp = dt.datetime.now().strftime("%Y%m%d-%H%M%S")
        out = root / f"{stamp}-seed{seed}"
        k = 1
        while out.exists():
            out = root / f"{stamp}-seed{seed}-{k}"
            k += 1
    out.mkdir(parents=True, exist_ok=True)
    return out


def load_config_file(path):
    """Read a YAML config with optional ``model``, ``train``, ``data`` and ``split`` sections."""
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise CliError(f"{path}: invalid YAML: {exc}") from None
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: top level must be a mapping")
    unknown = set(cfg) - {"model", "train", "data", "split"}
    if unknown:
        raise CliError(f"{path}: unknown sections {sorted(unknown)}")
    return cfg


def _set(d, key, value):
    if value is not None:
        d[key] = value


def resolve(args, kind=None):
    """Merge defaults, config file and flags into (data, split, model, train) dicts."""
    cfg = load_config_file(getattr(args, "config", None))
    data = dict(cfg.get("data") or {})
    spl = dict(cfg.get("split") or {})
    model = dict(cfg.get("model") or {})
    trn = dict(cfg.get("train") or {})
    _set(data, "panel", getattr(args, "panel", None))
    _set(data, "target_csv", getattr(args, "target", None))
    if getattr(args, "factors", None):
        data["factor_csvs"] = list(args.factors)
    _set(data, "lookback", getattr(args, "p", None))
    _set(data, "horizon", getattr(args, "q", None))
    if getattr(args, "train_range", None):
        spl["train_range"] = [d.isoformat() for d in args.train_range]
    if getattr(args, "test_range", None):
        spl["test_range"] = [d.isoformat() for d in args.test_range]
    _set(spl, "validation_fraction", getattr(args, "val_fraction", None))
    if kind is not None:
        model["kind"] = kind
    _set(trn, "loss", getattr(args, "loss", None))
    _set(trn, "max_epochs", getattr(args, "epochs", None))
    _set(trn, "learning_rate", getattr(args, "lr", None))
    _set(trn, "batch_size", getattr(args, "batch_size", None))
    _set(trn, "patience", getattr(args, "patience", None))
    _set(trn, "optimizer", getattr(args, "optimizer", None))
    if args.seed is not None:
        trn["seed"] = args.seed
        model["seed"] = args.seed
        spl["seed"] = args.seed
    try:
        data_cfg = DataConfig(**data)
        split_spec = SplitSpec.from_dict({**SplitSpec().to_dict(), **spl})
        train_cfg = TrainConfig.from_dict(trn).validate()
    except TypeError as exc:
        raise CliError(f"bad configuration: {exc}") from None
    return data_cfg, split_spec, model, train_cfg


def _model_config(model_fields, panel, data_cfg):
    fields_ = dict(model_fields)
    fields_.setdefault("kind", "attention")
    fields_["lookback"] = data_cfg.lookback
    fields_["n_factors"] = panel.n_factors
    return ModelConfig.from_dict(fields_).validate()


# ---------------------------------------------------------------------------


def cmd_prepare(args):
    for path in [args.target, *args.factors]:
        if not Path(path).is_file():
            raise CliError(f"no such file: {path}")
    panel = panel_from_csvs(args.target, args.factors, include_target=not args.no_target_column)
    out = Path(args.out) if args.out else _run_dir(args, 0) / "panel.tlp"
    out.parent.mkdir(parents=True, exist_ok=True)
    samples = make_samples(panel, args.p, args.q)
    save_panel(panel, out, extra={"lookback": args.p, "horizon": args.q, "n_samples": len(samples)})
    print(f"panel      {out}")
    print(f"factors    {', '.join(panel.factor_ids)}")
    print(f"days       {panel.n_days} ({panel.dates[0]} .. {panel.dates[-1]})")
    print(f"filled     {len(panel.filled_cells)} carried cells")
    print(f"samples    {len(samples)} (p={args.p}, q={args.q})")
    if samples:
        print(f"anchors    {samples[0].anchor_date} .. {samples[-1].anchor_date}")
    return EXIT_OK


def cmd_synth(args):
    if args.days < 2 or args.factors < 0:
        raise CliError("--days must be >= 2 and --factors >= 0")
    cfg = SynthConfig(n_days=args.days, n_factors=args.factors, start_date=args.start,
                      correlation=args.correlation, missing_prob=args.missing_prob)
    target, factors = synthesize(cfg, args.seed if args.seed is not None else 0)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(target, out / "target.csv")
    for f in factors:
        write_csv(f, out / f"{f.index_id}.csv")
    print(f"wrote {1 + len(factors)} CSV files to {out}")
    return EXIT_OK


def _prepare_run(args, kind):
    data_cfg, split_spec, model_fields, train_cfg = resolve(args, kind)
    panel = data_cfg.load_panel()
    samples = make_samples(panel, data_cfg.lookback, data_cfg.horizon, data_cfg.skip_initial)
    tr, va, te = split(samples, split_spec)
    mcfg = _model_config(model_fields, panel, data_cfg)
    return data_cfg, split_spec, mcfg, train_cfg, panel, (tr, va, te)


def cmd_train(args):
    data_cfg, split_spec, mcfg, train_cfg, panel, (tr, va, te) = _prepare_run(args, args.model)
    out = _run_dir(args, train_cfg.seed)
    manifest = RunManifest(model=mcfg.to_dict(), train=train_cfg.to_dict(), data=data_cfg.to_dict(),
                           split=split_spec.to_dict(), checkpoint="checkpoint.ckpt")
    manifest.save(out / "manifest.json")
    t0 = time.perf_counter()
    try:
        model, manifest = train(Model(mcfg), tr, va, train_cfg, manifest)
    except TrainingAborted as exc:
        (exc.manifest or manifest).save(out / "manifest.json")
        raise
    except KeyboardInterrupt:
        manifest.status = "incomplete"
        manifest.save(out / "manifest.json")
        raise
    save_checkpoint(model, out / "checkpoint.ckpt", extra={"factor_ids": list(panel.factor_ids)})
    report = evaluate(model, te)
    manifest.test = report.summary()
    manifest.save(out / "manifest.json")
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out / "timing.json").write_text(json.dumps({"wall_clock_s": time.perf_counter() - t0}) + "\n")
    print(f"run        {out}")
    print(f"model      {mcfg.kind} (loss {manifest.loss}, {model.n_parameters()} parameters)")
    print(f"samples    train {len(tr)}  validation {len(va)}  test {len(te)}")
    print(f"best epoch {manifest.best_epoch} (validation hit ratio {manifest.best_val_hit_ratio:.4f})")
    print(report.table())
    print(f"test hit ratio {report.hit_ratio:.4f}")
    return EXIT_OK


def cmd_sweep(args):
    data_cfg, split_spec, model_fields, train_cfg = resolve(args)
    panel = data_cfg.load_panel()
    kinds = [k.strip() for k in args.models.split(",") if k.strip()]
    bad = [k for k in kinds if k not in KINDS]
    if bad or not kinds:
        raise CliError(f"unknown model kinds {bad}; expected some of {', '.join(KINDS)}")
    grid = parse_grid(args.grid)
    overrides = {k: v for k, v in model_fields.items() if k not in ("kind", "lookback", "n_factors")}
    table = sweep(grid, kinds, panel, split_spec, train_cfg, overrides, repeats=args.repeats, jobs=args.jobs,
                  skip_initial=data_cfg.skip_initial)
    out = _run_dir(args, train_cfg.seed)
    (out / "sweep.json").write_text(table.to_json(), encoding="utf-8")
    text = table.table()
    (out / "sweep.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    print(f"sweep table written to {out}")
    if not table.ok_cells():
        raise CliError("no sweep cell succeeded")
    return EXIT_OK


def _locate_inputs(data_cfg, run_dir):
    """Relative paths in a manifest are tried from the cwd, then from the run's parent."""
    def find(path):
        if path is None or Path(path).is_absolute() or Path(path).exists():
            return path
        alt = run_dir.parent / path
        return str(alt) if alt.exists() else path
    return replace(data_cfg, panel=find(data_cfg.panel), target_csv=find(data_cfg.target_csv),
                   factor_csvs=[find(f) for f in data_cfg.factor_csvs])


def cmd_attend(args):
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise CliError(f"no such checkpoint: {ckpt}")
    model, extra = read_checkpoint(ckpt)
    if not model.supports_attention:
        raise UnsupportedModelError(f"checkpoint holds a {model.kind} model without attention")
    manifest_path = ckpt.parent / "manifest.json"
    if manifest_path.is_file():
        m = RunManifest.load(manifest_path)
        data_cfg = DataConfig(**m.data)
        split_spec = SplitSpec.from_dict(m.split)
    else:
        data_cfg = DataConfig(lookback=model.config.lookback)
        split_spec = SplitSpec()
    if args.panel:
        data_cfg = replace(data_cfg, panel=args.panel, target_csv=None)
    else:
        data_cfg = _locate_inputs(data_cfg, ckpt.resolve().parent)
    panel = data_cfg.load_panel()
    samples = make_samples(panel, model.config.lookback, data_cfg.horizon, data_cfg.skip_initial)
    t0, t1 = args.test_range or split_spec.test_range
    test = [s for s in samples if t0 <= s.anchor_date <= t1]
    if not test:
        raise CliError(f"no test samples anchored in {t0}..{t1}")
    archive = record_traces(model, test, checkpoint_id=ckpt.name,
                            factor_labels=extra.get("factor_ids") or list(panel.factor_ids))
    archive = archive.top(args.top_k)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    export_csv(archive, out / "traces.csv")
    for e in archive.entries:
        render_entry(archive, e, out)
    print(f"wrote {len(archive)} traces and {2 * len(archive)} images to {out}")
    for e in archive.entries:
        top_f = archive.factor_labels[int(e.trace.factor_alpha.argmax())]
        top_t = archive.time_labels[int(e.trace.time_alpha.argmax())]
        print(f"{e.anchor_date}  change {e.change_ratio:+.4f}  predicted {e.predicted:<4}  "
              f"top factor {top_f}  top day {top_t}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def _add_data_flags(p):
    p.add_argument("--config", help="YAML file with model/train/data/split sections")
    p.add_argument("--panel", help="panel cache written by 'prepare'")
    p.add_argument("--target", help="target index CSV (instead of --panel)")
    p.add_argument("--factors", nargs="*", help="factor CSVs used with --target")
    p.add_argument("--p", type=int, help="lookback days (default 10)")
    p.add_argument("--q", type=int, help="prediction days (default 19)")
    p.add_argument("--train-range", type=_date_range, help="START:END of training anchors")
    p.add_argument("--test-range", type=_date_range, help="START:END of test anchors")
    p.add_argument("--val-fraction", type=float, help="validation share of the training pool (default 0.3)")
    p.add_argument("--seed", type=int, help="seed for initialisation, batching and the split")
    p.add_argument("--epochs", type=int, help="maximum epochs (default 500)")
    p.add_argument("--lr", type=float, help="learning rate (default 1e-3)")
    p.add_argument("--batch-size", type=int, help="mini-batch size (default 32)")
    p.add_argument("--patience", type=int, help="early-stop patience in epochs (default 25)")
    p.add_argument("--optimizer", choices=["adam", "sgd"], help="optimizer (default adam)")
    p.add_argument("--out", help="output directory (default: timestamped run dir)")


def build_parser():
    parser = argparse.ArgumentParser(prog="trendlab", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"trendlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress lines")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="align CSVs into a panel cache and count samples")
    p.add_argument("target", help="target index CSV (header date,close)")
    p.add_argument("factors", nargs="*", help="factor index CSVs")
    p.add_argument("--p", type=int, default=10, help="lookback days (default 10)")
    p.add_argument("--q", type=int, default=19, help="prediction days (default 19)")
    p.add_argument("--no-target-column", action="store_true",
                   help="do not include the target's own returns as an input column")
    p.add_argument("--out", help="panel cache path (default: run dir/panel.tlp)")
    p.set_defaults(func=cmd_prepare, seed=None)

    p = sub.add_parser("synth", help="write a synthetic target and factor CSVs")
    p.add_argument("--days", type=int, default=2000, help="trading days (default 2000)")
    p.add_argument("--factors", type=int, default=4, help="number of factor indexes (default 4)")
    p.add_argument("--seed", type=int, default=0, help="generator seed (default 0)")
    p.add_argument("--start", default="2000-01-03", help="first trading day (default 2000-01-03)")
    p.add_argument("--correlation", type=float, default=0.5, help="factor/target correlation (default 0.5)")
    p.add_argument("--missing-prob", type=float, default=0.0,
                   help="chance a factor misses a target trading day (default 0)")
    p.add_argument("--out-dir", required=True, help="directory for the CSV files")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="split, train, select on validation, evaluate on test")
    p.add_argument("--model", choices=KINDS, help="model kind (default attention)")
    p.add_argument("--loss", choices=["ce", "weighted_ce"],
                   help="loss (default weighted_ce for weighted_attention, else ce)")
    _add_data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="train and evaluate every (model, p, q) cell of a grid")
    p.add_argument("--grid", default="paper",
                   help="'paper', lookbacks like '5,60', or cells like '60:40' / '10:1-5' (default paper)")
    p.add_argument("--models", default="attention", help="comma-separated model kinds (default attention)")
    p.add_argument("--repeats", type=int, default=1, help="runs per cell with seeds seed..seed+n-1 (default 1)")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes (default 1)")
    p.add_argument("--loss", choices=["ce", "weighted_ce"], help="force one loss for every kind")
    _add_data_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("attend", help="export attention traces and bar charts for a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint of an attention model")
    p.add_argument("--top-k", type=int, default=1, help="samples with the largest |change ratio| (0 = all)")
    p.add_argument("--out-dir", required=True, help="directory for traces.csv and SVG charts")
    p.add_argument("--panel", help="override the manifest's data source with this panel cache")
    p.add_argument("--test-range", type=_date_range, help="override the manifest's test range")
    p.set_defaults(func=cmd_attend, seed=None)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRAIN
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130
    except (TrendlabError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
