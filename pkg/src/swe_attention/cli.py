"""Command-line entry point: ``swe-attention <subcommand> [flags]``.

Working-directory layout under ``--out DIR``::

    stations.csv, daily.csv         synth output (input format for prepare)
    dataset.npz                     prepared season dataset
    checkpoint_<model>.json         train output
    history_<model>.csv             per-epoch loss / lr / seconds
    predictions_<model>.csv         predict output
    report/                         evaluate output
    effective_config.<cmd>.json     resolved configuration of each run
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as D
from .evaluation import build_report, format_summary, write_report
from .gradcheck import TOLERANCE, run_suite
from .layers import EncoderConfig
from .models import (LinearRegressionConfig, LSTMConfig, SpatialModelConfig,
                     TemporalModelConfig, ensemble_predict)
from .training import TrainConfig, load_trained, predict, save_trained, train

log = logging.getLogger("swe_attention")

SCHEMA_VERSION = 1
COMMANDS = ("prepare", "synth", "train", "predict", "evaluate", "report", "gradcheck")
TRAINABLE = ("spatial", "temporal", "lstm", "lr")
ALL_KINDS = TRAINABLE + ("ensemble",)

DEFAULTS = {
    "seed": 0,
    "out": "run",
    "model": "spatial",
    "test_years": list(D.DEFAULT_TEST_YEARS),
    "gamma_window": 1,
    "season_length": D.SEASON_LENGTH,
    "threshold": D.MISSING_THRESHOLD,
    "stations": None,
    "daily": None,
    "data": None,
    "checkpoint": None,
    "predictions": None,
    # synthetic generator
    "n": 8, "m": 30, "seasons": 4, "noise": 0.5, "first_year": 2002, "missing": 0.0,
    # architecture (desk scale; --full-scale switches to 512 / 16 / 24)
    "full_scale": False,
    "embed_dim": 32, "heads": 4, "layers": 2, "ffn_dim": None,
    "encoder_dropout": 0.1, "no_dropout": False, "lstm_hidden": 128, "ridge": 1e-8,
    # optimisation
    "epochs": 50, "batch_size": None, "lr": 1e-4, "scheduler_factor": 0.6,
    "scheduler_period": 3, "weight_decay": 0.01, "grad_clip": 1.0,
    "tiny": False,
}
FULL_ARCH = {"embed_dim": 512, "heads": 16, "layers": 24}


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated years, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("common")
    g.add_argument("--config", help="JSON config file (flags override it)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="working directory")
    g.add_argument("--model", help=f"model kind(s), comma-separated: {', '.join(ALL_KINDS)}")
    g.add_argument("--test-years", type=_int_list, dest="test_years")
    g.add_argument("--gamma-window", type=int, dest="gamma_window")
    g.add_argument("--season-length", type=int, dest="season_length")
    g.add_argument("--threshold", type=float, help="missing-value filter fraction")
    g.add_argument("--stations", help="stations.csv path")
    g.add_argument("--daily", help="daily.csv path")
    g.add_argument("--data", help="dataset cache path (default OUT/dataset.npz)")
    g.add_argument("--checkpoint", action="append", help="checkpoint path (repeatable)")
    g.add_argument("--predictions", action="append", help="predictions CSV (repeatable)")
    s = common.add_argument_group("synthetic data")
    s.add_argument("--n", type=int)
    s.add_argument("--m", type=int)
    s.add_argument("--seasons", type=int)
    s.add_argument("--noise", type=float)
    s.add_argument("--first-year", type=int, dest="first_year")
    s.add_argument("--missing", type=float, help="fraction of values blanked")
    a = common.add_argument_group("architecture")
    a.add_argument("--full-scale", action="store_true", default=None, dest="full_scale")
    a.add_argument("--embed-dim", type=int, dest="embed_dim")
    a.add_argument("--heads", type=int)
    a.add_argument("--layers", type=int)
    a.add_argument("--ffn-dim", type=int, dest="ffn_dim")
    a.add_argument("--encoder-dropout", type=float, dest="encoder_dropout")
    a.add_argument("--no-dropout", action="store_true", default=None, dest="no_dropout")
    a.add_argument("--lstm-hidden", type=int, dest="lstm_hidden")
    a.add_argument("--ridge", type=float)
    o = common.add_argument_group("optimisation")
    o.add_argument("--epochs", type=int)
    o.add_argument("--batch-size", type=int, dest="batch_size")
    o.add_argument("--lr", type=float)
    o.add_argument("--scheduler-factor", type=float, dest="scheduler_factor")
    o.add_argument("--scheduler-period", type=int, dest="scheduler_period")
    o.add_argument("--weight-decay", type=float, dest="weight_decay")
    o.add_argument("--grad-clip", type=float, dest="grad_clip", help="0 disables clipping")
    o.add_argument("--tiny", action="store_true", default=None, help="gradcheck: smallest dims")
    o.add_argument("-v", "--verbose", action="store_true", default=False)

    parser = _Parser(prog="swe-attention",
                     description="Attention models for daily snow water-equivalent")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "prepare": "stations.csv + daily.csv -> dataset cache",
        "synth": "generate a synthetic station set and its dataset cache",
        "train": "fit a model; writes checkpoint and history",
        "predict": "write predictions_<model>.csv for every season",
        "evaluate": "score predictions on the test seasons; writes report/",
        "report": "print the evaluation summary tables",
        "gradcheck": "finite-difference gradient suite",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name], description=helps[name])
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    """defaults < config file < flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise CliError(f"config file not found: {path}")
        doc = json.loads(path.read_text())
        if doc.pop("schema_version", None) != SCHEMA_VERSION:
            raise CliError(f"{path}: expected \"schema_version\": {SCHEMA_VERSION}")
        unknown = sorted(set(doc) - set(DEFAULTS))
        if unknown:
            raise CliError(f"{path}: unknown keys {unknown}")
        cfg.update(doc)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if cfg["full_scale"]:
        for key, value in FULL_ARCH.items():
            if getattr(args, key, None) is None:
                cfg[key] = value
    kinds = cfg["model"] if isinstance(cfg["model"], list) else str(cfg["model"]).split(",")
    kinds = [k.strip() for k in kinds if k.strip()]
    bad = [k for k in kinds if k not in ALL_KINDS]
    if bad or not kinds:
        raise CliError(f"unknown model kind(s) {bad}; choose from {', '.join(ALL_KINDS)}")
    cfg["model"] = kinds
    if cfg["embed_dim"] % cfg["heads"]:
        raise CliError(f"--embed-dim {cfg['embed_dim']} is not divisible by --heads {cfg['heads']}")
    return cfg


def _echo(cfg: dict, command: str) -> None:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / f"effective_config.{command}.json").write_text(
        json.dumps({"schema_version": SCHEMA_VERSION, **cfg}, indent=2, sort_keys=True) + "\n")


def _data_path(cfg) -> Path:
    return Path(cfg["data"]) if cfg["data"] else Path(cfg["out"]) / "dataset.npz"


def _require(path: Path, what: str) -> Path:
    if not path.is_file():
        raise CliError(f"missing {what}: {path}")
    return path


def _load_dataset(cfg) -> D.SeasonDataset:
    return D.SeasonDataset.load(_require(_data_path(cfg), "dataset cache (run prepare or synth)"))


# ---------------------------------------------------------------- subcommands

def cmd_prepare(cfg) -> None:
    out = Path(cfg["out"])
    stations = _require(Path(cfg["stations"] or out / "stations.csv"), "stations file")
    daily = _require(Path(cfg["daily"] or out / "daily.csv"), "daily file")
    metas, records = D.load_station_data(stations, daily, cfg["season_length"])
    ds = D.build_dataset(metas, records, cfg["season_length"], cfg["gamma_window"],
                         cfg["threshold"])
    path = _data_path(cfg)
    path.parent.mkdir(parents=True, exist_ok=True)
    ds.save(path)
    print(f"prepared {ds.n_locations} of {len(metas)} stations x {len(ds.seasons)} seasons "
          f"x {ds.season_length} days, {ds.feature_dim} features -> {path}")


def cmd_synth(cfg) -> None:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    synth = D.SyntheticConfig(n=cfg["n"], m=cfg["m"], seasons=cfg["seasons"],
                              noise=cfg["noise"], seed=cfg["seed"],
                              first_year=cfg["first_year"], missing_fraction=cfg["missing"])
    metas, records = D.generate_synthetic(synth)
    D.write_station_csv(out / "stations.csv", metas)
    D.write_daily_csv(out / "daily.csv", records)
    cfg = {**cfg, "stations": str(out / "stations.csv"), "daily": str(out / "daily.csv"),
           "season_length": cfg["m"]}
    cmd_prepare(cfg)


def _split(cfg, ds):
    return D.split_train_test(ds.seasons, cfg["test_years"])


def model_config(kind: str, cfg: dict, ds: D.SeasonDataset):
    drop = 0.0 if cfg["no_dropout"] else None
    if kind in ("spatial", "temporal"):
        d = cfg["embed_dim"]
        enc = EncoderConfig(d, cfg["heads"], cfg["layers"], cfg["ffn_dim"],
                            cfg["encoder_dropout"] if drop is None else drop)
        cls = SpatialModelConfig if kind == "spatial" else TemporalModelConfig
        seq_len = ds.n_locations if kind == "spatial" else ds.season_length
        extra = {} if drop is None else {"dropout_reduction": drop, "dropout_output": drop}
        return cls(seq_len=seq_len, feature_dim=ds.feature_dim, embed_dim=d, encoder=enc,
                   **extra)
    if kind == "lstm":
        return LSTMConfig(ds.feature_dim, cfg["lstm_hidden"])
    if kind == "lr":
        return LinearRegressionConfig(ds.feature_dim, cfg["ridge"])
    raise CliError(f"cannot train model kind {kind!r}")


def train_config(cfg) -> TrainConfig:
    return TrainConfig(lr0=cfg["lr"], scheduler_factor=cfg["scheduler_factor"],
                       scheduler_period_epochs=cfg["scheduler_period"], epochs=cfg["epochs"],
                       batch_size=cfg["batch_size"], weight_decay=cfg["weight_decay"],
                       seed=cfg["seed"], grad_clip=cfg["grad_clip"] or None)


def cmd_train(cfg) -> None:
    ds = _load_dataset(cfg)
    train_seasons, test_seasons = _split(cfg, ds)
    ds = D.normalize_features(ds, train_seasons, test_seasons)
    kinds = []
    for k in cfg["model"]:
        kinds += ["spatial", "temporal"] if k == "ensemble" else [k]
    out = Path(cfg["out"])
    tc = train_config(cfg)
    for kind in dict.fromkeys(kinds):
        model, history = train(kind, ds, tc, model_config(kind, cfg, ds))
        ckpt = out / f"checkpoint_{kind}.json"
        save_trained(ckpt, model, ds, {"train_seasons": train_seasons,
                                       "test_seasons": test_seasons})
        history.write_csv(out / f"history_{kind}.csv")
        last = f", final loss {history.losses[-1]:.6f}" if history.epochs else ""
        print(f"trained {kind}: {model.num_parameters()} parameters, "
              f"{len(history.epochs)} epochs{last} -> {ckpt}")


def _checkpoint_paths(cfg) -> dict[str, Path]:
    found = {}
    for p in cfg["checkpoint"] or []:
        found[load_trained(_require(Path(p), "checkpoint")).kind] = Path(p)
    for kind in TRAINABLE:
        default = Path(cfg["out"]) / f"checkpoint_{kind}.json"
        if kind not in found and default.is_file():
            found[kind] = default
    return found


def write_predictions(path: Path, kind: str, ds: D.SeasonDataset, values: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "station_id", "season", "day", "swe_mm"])
        for i, sid in enumerate(ds.station_ids):
            for s, season in enumerate(ds.seasons):
                for j in range(ds.season_length):
                    w.writerow([kind, sid, season, j + 1, repr(float(values[i, j, s]))])


def read_predictions(paths, ds: D.SeasonDataset, seasons) -> dict[str, np.ndarray]:
    sid_index = {sid: i for i, sid in enumerate(ds.station_ids)}
    col = {h: k for k, h in enumerate(seasons)}
    out: dict[str, np.ndarray] = {}
    for path in paths:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["model", "station_id", "season", "day", "swe_mm"]:
                raise CliError(f"{path}: not a predictions file")
            for row in reader:
                kind, sid, season, day, value = row
                season, day = int(season), int(day)
                if season not in col:
                    continue
                if sid not in sid_index:
                    raise CliError(f"{path}:{reader.line_num}: unknown station {sid}")
                arr = out.setdefault(kind, np.full(
                    (ds.n_locations, ds.season_length, len(seasons)), np.nan))
                arr[sid_index[sid], day - 1, col[season]] = float(value)
    return out


def cmd_predict(cfg) -> None:
    ds = _load_dataset(cfg)
    paths = _checkpoint_paths(cfg)
    wanted = list(dict.fromkeys(cfg["model"]))
    need = set()
    for k in wanted:
        need |= {"spatial", "temporal"} if k == "ensemble" else {k}
    missing = sorted(need - set(paths))
    if missing:
        hint = " (ensemble requires both spatial and temporal checkpoints)" \
            if "ensemble" in wanted else ""
        raise CliError(f"missing checkpoint for {', '.join(missing)}{hint}")
    values = {}
    for kind in sorted(need):
        ckpt = load_trained(paths[kind])
        if ckpt.stations != ds.station_ids:
            raise CliError(f"{paths[kind]}: station order differs from the dataset")
        normed = D.apply_normalization(ds, ckpt.normalization["features"])
        values[kind] = predict(ckpt.model, normed)
    if "ensemble" in wanted:
        values["ensemble"] = ensemble_predict(values["spatial"], values["temporal"])
    out = Path(cfg["out"])
    for kind in wanted:
        path = out / f"predictions_{kind}.csv"
        write_predictions(path, kind, ds, values[kind])
        print(f"predicted {kind} -> {path}")


def cmd_evaluate(cfg) -> None:
    out = Path(cfg["out"])
    paths = [Path(p) for p in cfg["predictions"] or []] or sorted(out.glob("predictions_*.csv"))
    if not paths:
        raise CliError(f"no predictions found: pass --predictions or run predict "
                       f"(expected {out}/predictions_<model>.csv)")
    for p in paths:
        _require(p, "predictions file")
    ds = _load_dataset(cfg)
    _, test_seasons = _split(cfg, ds)
    preds = read_predictions(paths, ds, test_seasons)
    if not preds:
        raise CliError("predictions contain no rows for the test seasons")
    report = build_report(preds, ds, test_seasons)
    target = write_report(report, out / "report")
    print(f"evaluated {', '.join(report.models)} on seasons "
          f"{', '.join(map(str, test_seasons))} -> {target}")


def cmd_report(cfg) -> None:
    path = _require(Path(cfg["out"]) / "report" / "summary.json",
                    "evaluation summary (run evaluate)")
    print(format_summary(json.loads(path.read_text())))


def cmd_gradcheck(cfg) -> int:
    results = run_suite(tiny=bool(cfg["tiny"]), seed=cfg["seed"])
    for r in results:
        status = "ok" if r.passed else "FAIL"
        print(f"{r.name:34s} max rel error {r.max_rel_error:.3e}  {status}")
    worst = max(r.max_rel_error for r in results)
    print(f"max relative error {worst:.3e} over {len(results)} checks "
          f"(tolerance {TOLERANCE:g})")
    return 0 if worst < TOLERANCE else 1


HANDLERS = {"prepare": cmd_prepare, "synth": cmd_synth, "train": cmd_train,
            "predict": cmd_predict, "evaluate": cmd_evaluate, "report": cmd_report,
            "gradcheck": cmd_gradcheck}


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        cfg = resolve_config(args)
        if args.command not in ("report", "gradcheck"):
            _echo(cfg, args.command)
        status = HANDLERS[args.command](cfg)
        return int(status or 0)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except (CliError, D.DataFormatError, ValueError, OSError, RuntimeError) as exc:
        message = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"swe-attention: error: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
