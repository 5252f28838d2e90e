"""Command-line interface: generate, train, eval, infer, baseline, plot.

Every command accepts ``--config run.toml``. File keys use the flag names
with underscores (``per_id``, ``batch_size``) and may sit at top level or in
a ``[<command>]`` table; explicit flags win over the file. The effective
configuration is written to ``<out>/config.resolved.toml``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .errors import ConfigError, PulseBenchError, UnknownCommand

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

SCHEMA_VERSION = 1
COMMANDS = ("generate", "train", "eval", "infer", "baseline", "plot")
log = logging.getLogger("pulsebench")


@dataclass
class Opt:
    name: str
    type: Callable = str
    default: Any = None
    help: str = ""
    nargs: int | str | None = None


def _stage(v):
    return None if str(v).lower() in ("none", "0") else int(v)


OPTIONS: dict[str, list[Opt]] = {
    "generate": [
        Opt("out", str, "data", "dataset root"),
        Opt("identities", int, 8, "number of identities K"),
        Opt("per_id", int, 20, "records per identity"),
        Opt("seed", int, None, "generator seed (falls back to PULSEBENCH_SEED, then 0)"),
        Opt("hr_range", float, [60.0, 150.0], "HR range in bpm", 2),
        Opt("duration", float, 24.0, "record length in seconds"),
        Opt("fps", float, 30.0, "frame rate"),
        Opt("resolution", int, [32, 32], "frame height and width", 2),
        Opt("noise_std", float, 2.0, "pixel noise std (8-bit units)"),
        Opt("illum_drift_amp", float, 0.0, "illumination drift amplitude"),
        Opt("workers", int, 1, "parallel writer processes"),
    ],
    "train": [
        Opt("data", str, None, "dataset root"),
        Opt("out", str, "run", "output directory"),
        Opt("clip_length", int, 64, "frames per training clip"),
        Opt("stage_widths", int, [16, 32, 64], "rPPG stage channel widths", 3),
        Opt("identity_widths", int, [16, 32, 64, 64], "identity extractor widths", 4),
        Opt("fusion_stage", _stage, 3, "stage receiving the fused identity map (1, 2, 3 or none)"),
        Opt("tcu_upsample_factor", int, 1, "identity-branch upsampling factor"),
        Opt("temperature", float, 0.05, "soft HR temperature"),
        Opt("band", float, [0.5, 4.2], "HR band in Hz (open interval)", 2),
        Opt("batch_size", int, 16, "mini-batch size"),
        Opt("lr", float, 1e-5, "learning rate"),
        Opt("weight_decay", float, 5e-5, "decoupled weight decay"),
        Opt("epochs", int, 60, "training epochs"),
        Opt("seed", int, None, "training seed (falls back to PULSEBENCH_SEED, then 0)"),
        Opt("stride", int, 32, "spacing of candidate clip starts"),
        Opt("clips_per_record", int, 1, "clips drawn per training record per epoch"),
        Opt("val_fraction", float, 0.2, "records held out per identity"),
        Opt("val_every", int, 1, "validate every N epochs"),
        Opt("early_stop_mae", float, None, "stop once validation MAE is at or below this"),
        Opt("early_stop_acc", float, None, "also require this validation identity accuracy"),
    ],
    "eval": [
        Opt("data", str, None, "dataset root"),
        Opt("out", str, "eval", "output directory"),
        Opt("ckpt", str, "none", "checkpoint path, or none for a classical method"),
        Opt("method", str, "model", "model, green, chrom, pos or oracle"),
        Opt("records", str, "all", "all, or val to score the checkpoint's held-out records"),
        Opt("target_seconds", float, 8.0, "evaluation segment length"),
    ],
    "infer": [
        Opt("data", str, None, "dataset root or a single record directory"),
        Opt("out", str, "infer", "output directory"),
        Opt("ckpt", str, "none", "checkpoint path, or none for a classical method"),
        Opt("method", str, "model", "model, green, chrom, pos or oracle"),
        Opt("target_seconds", float, 8.0, "segment length"),
    ],
    "baseline": [
        Opt("data", str, None, "dataset root"),
        Opt("out", str, "baseline", "output directory"),
        Opt("method", str, "all", "green, chrom, pos or all"),
        Opt("target_seconds", float, 8.0, "evaluation segment length"),
    ],
    "plot": [
        Opt("history", str, None, "history.csv from a training run"),
        Opt("eval_dir", str, None, "output directory of eval or baseline"),
        Opt("out", str, None, "output directory (plots/ is created inside)"),
        Opt("max_overlays", int, 4, "records drawn in the BVP overlay"),
    ],
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pulsebench", description="Synthetic rPPG benchmark toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for cmd, opts in OPTIONS.items():
        p = sub.add_parser(cmd, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="TOML file with keys for this command")
        for o in opts:
            kwargs = dict(type=o.type, help=f"{o.help} (default: {o.default})")
            if o.nargs is not None:
                kwargs["nargs"] = o.nargs
            p.add_argument("--" + o.name.replace("_", "-"), dest=o.name, **kwargs)
    return parser


def _coerce(opt: Opt, value):
    if value is None:
        return None
    if opt.nargs is not None:
        if not isinstance(value, (list, tuple)) or (isinstance(opt.nargs, int) and len(value) != opt.nargs):
            raise ConfigError(f"'{opt.name}' expects {opt.nargs} values", key=opt.name)
        return [opt.type(v) for v in value]
    return opt.type(value)


def resolve_config(command: str, args: dict) -> dict:
    """Defaults, then the config file, then explicit flags."""
    opts = {o.name: o for o in OPTIONS[command]}
    resolved = {name: o.default for name, o in opts.items()}
    path = args.pop("config", None)
    if path is not None:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}", key="config") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}", key="config") from exc
        section = doc.get(command, {})
        flat = {k: v for k, v in doc.items() if not (k in COMMANDS and isinstance(v, dict))}
        for key, value in {**flat, **section}.items():
            if key not in opts:
                raise ConfigError(f"unknown key '{key}' for {command}", key=key)
            try:
                resolved[key] = _coerce(opts[key], value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for '{key}': {value!r}", key=key) from exc
    resolved.update(args)
    if "seed" in resolved and resolved["seed"] is None:
        env = os.environ.get("PULSEBENCH_SEED")
        try:
            resolved["seed"] = int(env) if env not in (None, "") else 0
        except ValueError as exc:
            raise ConfigError(f"PULSEBENCH_SEED must be an integer, got {env!r}", key="seed") from exc
    return resolved


def write_resolved(cfg: dict, command: str, out: Path):
    import tomli_w

    out.mkdir(parents=True, exist_ok=True)
    table = {k: v for k, v in cfg.items() if v is not None}
    with open(out / "config.resolved.toml", "wb") as fh:
        tomli_w.dump({command: table}, fh)


def _require(cfg: dict, key: str):
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"missing required key '{key}'", key=key)
    return cfg[key]


# ------------------------------------------------------------------ commands

def cmd_generate(cfg: dict) -> dict:
    from .synthgen import generate_dataset

    out = Path(cfg["out"])
    idx = generate_dataset(cfg["identities"], cfg["per_id"], tuple(cfg["hr_range"]), cfg["seed"], out,
                           workers=cfg["workers"], fps=cfg["fps"], duration=cfg["duration"],
                           resolution=tuple(cfg["resolution"]), noise_std=cfg["noise_std"],
                           illum_drift_amp=cfg["illum_drift_amp"])
    write_resolved(cfg, "generate", out)
    return {"records": len(idx), "identities": idx.num_identities, "out": str(out)}


def cmd_train(cfg: dict) -> dict:
    from .ingest import index_dataset, load_record
    from .model import ModelConfig
    from .spectral import HrBand
    from .trainer import TrainConfig, train

    data = Path(_require(cfg, "data"))
    out = Path(cfg["out"])
    idx = index_dataset(data)
    first = load_record(idx.records[0].path)
    _, c, h, w = first.frames.shape
    mc = ModelConfig(
        input_shape=(cfg["clip_length"], c, h, w), num_identities=idx.num_identities,
        stage_widths=tuple(cfg["stage_widths"]), identity_widths=tuple(cfg["identity_widths"]),
        fusion_stage=cfg["fusion_stage"], tcu_upsample_factor=cfg["tcu_upsample_factor"],
        temperature=cfg["temperature"], band=HrBand(*cfg["band"]))
    tc = TrainConfig(**{k: cfg[k] for k in ("batch_size", "lr", "weight_decay", "epochs", "seed", "stride",
                                            "clips_per_record", "val_fraction", "val_every",
                                            "early_stop_mae", "early_stop_acc")})
    write_resolved(cfg, "train", out)
    ckpt, history = train(mc, tc, idx, out_dir=out)
    return {"checkpoint": str(out / "checkpoint.pt"), "history": str(out / "history.csv"),
            "epochs": len(history), "best_epoch": ckpt.info.get("epoch"),
            "val_mae": _finite(ckpt.info.get("val_mae")), "val_id_acc": _finite(ckpt.info.get("val_id_acc"))}


def _finite(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def _predictor(cfg: dict):
    from .trainer import BaselinePredictor, GroundTruthPredictor, ModelPredictor

    method = cfg["method"].lower()
    ckpt = cfg.get("ckpt", "none")
    has_ckpt = ckpt not in (None, "", "none")
    if method == "model":
        if not has_ckpt:
            raise ConfigError("method 'model' needs --ckpt", key="ckpt")
        return ModelPredictor.from_checkpoint(ckpt), method
    if has_ckpt:
        raise ConfigError(f"--ckpt is only used with method 'model', got method '{method}'", key="ckpt")
    if method == "oracle":
        return GroundTruthPredictor(), method
    try:
        return BaselinePredictor(method), method
    except ValueError as exc:
        raise ConfigError(str(exc), key="method") from exc


def _dataset(path: Path):
    from .ingest import index_dataset, DatasetIndex, RecordDescriptor

    if (path / "meta.json").is_file():
        rec_id = 0
        try:
            rec_id = int(json.loads((path / "meta.json").read_text()).get("identity", 0))
        except (ValueError, AttributeError):
            pass
        return DatasetIndex([RecordDescriptor(path, 0, rec_id, 0.0)], 1), path.parent
    return index_dataset(path), path


def _rel(path, root: Path) -> str:
    try:
        return Path(path).relative_to(root).as_posix()
    except ValueError:
        return Path(path).as_posix()


def _write_bvp(out: Path, name: str, result, fps: float, gt_bvp: np.ndarray | None):
    bvp_dir = out / "bvp"
    bvp_dir.mkdir(parents=True, exist_ok=True)
    path = bvp_dir / (name.replace("/", "__") + ".csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_seconds", "bvp_pred", "bvp_gt", "segment"])
        for seg, (start, trace) in enumerate(zip(result.start_frames, result.bvp)):
            for j, v in enumerate(trace):
                i = start + j
                gt = "" if gt_bvp is None or i >= len(gt_bvp) else repr(float(gt_bvp[i]))
                writer.writerow([repr(i / fps), repr(float(v)), gt, seg])
    return path


def _run_predictions(cfg: dict, predictor, records, root: Path, out: Path, band) -> dict:
    from .trainer import evaluate_records

    res = evaluate_records(predictor, records, cfg["target_seconds"], band, keep_bvp=True)
    out.mkdir(parents=True, exist_ok=True)
    names = [_rel(r.path, root) for r in res.records]
    with open(out / "hr.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["record", "identity", "pred_hr", "gt_hr", "segment_hrs"])
        for name, r in zip(names, res.records):
            writer.writerow([name, r.identity, repr(r.pred_hr), repr(r.gt_hr),
                             " ".join(repr(v) for v in r.segment_hrs)])
    for name, r, lr in zip(names, res.records, records):
        _write_bvp(out, name, r, lr.record.fps, lr.bvp)
    return res, names


def _write_metrics(out: Path, method: str, res, names) -> dict:
    doc = {"schema_version": SCHEMA_VERSION, "method": method, **res.report.to_dict(),
           "records": names, "id_acc": _finite(res.id_acc)}
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    ba = {"schema_version": SCHEMA_VERSION, "method": method}
    if res.bland_altman is not None:
        ba.update(res.bland_altman.to_dict(), half_width=res.bland_altman.half_width)
    (out / "bland_altman.json").write_text(json.dumps(ba, indent=2, sort_keys=True) + "\n")
    return doc


def _band_of(predictor):
    from .spectral import DEFAULT_BAND
    from .trainer import ModelPredictor

    return predictor.model.config.band if isinstance(predictor, ModelPredictor) else DEFAULT_BAND


def cmd_eval(cfg: dict) -> dict:
    from .errors import EmptyDataset
    from .trainer import load_records

    predictor, method = _predictor(cfg)
    idx, root = _dataset(Path(_require(cfg, "data")))
    if cfg["records"] == "val":
        if method != "model":
            raise ConfigError("records = 'val' needs a checkpoint", key="records")
        from .model import Checkpoint

        held = {str(Path(p).resolve()) for p in Checkpoint.load(cfg["ckpt"]).info.get("val_records", [])}
        idx = idx.subset([d for d in idx.records if str(Path(d.path).resolve()) in held])
        if len(idx) == 0:
            raise EmptyDataset("none of the checkpoint's validation records are in this dataset")
    elif cfg["records"] != "all":
        raise ConfigError("records must be 'all' or 'val'", key="records")
    out = Path(cfg["out"])
    write_resolved(cfg, "eval", out)
    res, names = _run_predictions(cfg, predictor, load_records(idx), root, out, _band_of(predictor))
    doc = _write_metrics(out, method, res, names)
    return {k: doc[k] for k in ("method", "n", "mae", "rmse", "sd", "rho")}


def cmd_infer(cfg: dict) -> dict:
    from .trainer import load_records

    predictor, method = _predictor(cfg)
    idx, root = _dataset(Path(_require(cfg, "data")))
    out = Path(cfg["out"])
    write_resolved(cfg, "infer", out)
    res, names = _run_predictions(cfg, predictor, load_records(idx), root, out, _band_of(predictor))
    return {"method": method, "records": {n: _finite(r.pred_hr) for n, r in zip(names, res.records)}}


def cmd_baseline(cfg: dict) -> dict:
    from .baselines import BASELINES
    from .spectral import DEFAULT_BAND
    from .trainer import BaselinePredictor, load_records

    methods = sorted(BASELINES) if cfg["method"] == "all" else [cfg["method"]]
    for m in methods:
        if m not in BASELINES:
            raise ConfigError(f"unknown baseline '{m}'", key="method")
    idx, root = _dataset(Path(_require(cfg, "data")))
    records = load_records(idx)
    out = Path(cfg["out"])
    write_resolved(cfg, "baseline", out)
    summary = {}
    for m in methods:
        dest = out / m if len(methods) > 1 else out
        res, names = _run_predictions(cfg, BaselinePredictor(m), records, root, dest, DEFAULT_BAND)
        doc = _write_metrics(dest, m, res, names)
        summary[m] = {k: doc[k] for k in ("n", "mae", "rmse", "sd", "rho")}
    return summary


def cmd_plot(cfg: dict) -> dict:
    from . import plots

    if cfg["history"] is None and cfg["eval_dir"] is None:
        raise ConfigError("plot needs --history and/or --eval-dir", key="history")
    out = cfg["out"]
    if out is None:
        out = Path(cfg["history"]).parent if cfg["history"] else Path(cfg["eval_dir"])
    out = Path(out)
    write_resolved(cfg, "plot", out / "plots")
    written = []
    if cfg["history"] is not None:
        written += plots.plot_history(cfg["history"], out / "plots")
    if cfg["eval_dir"] is not None:
        written += plots.plot_eval(cfg["eval_dir"], out / "plots", cfg["max_overlays"])
    return {"plots": [str(p) for p in written]}


HANDLERS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer,
            "baseline": cmd_baseline, "plot": cmd_plot}


def run(argv: list[str]) -> dict:
    """Parse and execute one command; raises PulseBenchError on failure."""
    if argv and not argv[0].startswith("-") and argv[0] not in COMMANDS:
        raise UnknownCommand(f"unknown command '{argv[0]}'; choose from {', '.join(COMMANDS)}")
    args = vars(build_parser().parse_args(argv))
    command = args.pop("command")
    verbose = args.pop("verbose")
    if command is None:
        raise UnknownCommand(f"no command given; choose from {', '.join(COMMANDS)}")
    if verbose:
        logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg = resolve_config(command, args)
    return HANDLERS[command](cfg)


def _error_record(exc: BaseException) -> dict:
    if isinstance(exc, PulseBenchError):
        rec = {"error": exc.code, "message": str(exc)}
        if getattr(exc, "key", None) is not None:
            rec["key"] = exc.key
        return rec
    if isinstance(exc, (ValueError, OSError)):
        return {"error": f"pulsebench.{type(exc).__name__}", "message": str(exc)}
    return {"error": f"internal.{type(exc).__name__}", "message": str(exc)}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        result = run(argv)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except Exception as exc:
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return 1 if isinstance(exc, (PulseBenchError, ValueError, OSError)) else 3
    print(json.dumps(result, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
