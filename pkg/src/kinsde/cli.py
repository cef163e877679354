"""Command-line plumbing around the library: synthesize data, train, predict,
generate, sweep a latent component, evaluate, or serve over HTTP.

Run as `python3 -m kinsde.cli <subcommand> --help` for flags. Exit codes:
0 success, 1 usage error, 2 data error (missing/malformed files, unknown
ids), 3 runtime failure (e.g. training diverged).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import re
import sys
from pathlib import Path

import numpy as np

from .config import TrainConfig
from .metrics import ade_fde, histogram_csv, jerk_stats
from .model import TrajectoryModel
from .scenarios import (
    DEFAULT_FAMILIES,
    FAMILY_KINDS,
    generate_scenarios,
    load_dataset,
    save_dataset,
    scenario_from_record,
)
from .serving import generation_payload, make_server, payload_json
from .training import cv_baseline_ade, train, validation_ade

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

SWEEP_COMPONENTS = ("x", "y", "v", "psi", "sem0", "sem1", "sem2", "sem3")


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        # values like "-1:1:5" (range specs, negative offsets) must parse as
        # arguments, not be mistaken for option names
        self._negative_number_matcher = re.compile(r"^-\d")

    # argparse exits with 2 on bad flags; our contract reserves 2 for data errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _four_floats(text: str) -> list[float]:
    parts = text.split(",")
    if len(parts) != 4:
        raise argparse.ArgumentTypeError(
            f"expected 4 comma-separated numbers, got {text!r}")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not numeric: {text!r}") from None
    if not all(np.isfinite(values)):
        raise argparse.ArgumentTypeError("override values must be finite")
    return values


def _range_spec(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"expected lo:hi:count, got {text!r}")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {text!r}") from None
    if n < 2:
        raise argparse.ArgumentTypeError("range count must be at least 2")
    return lo, hi, n


def _family_list(text: str) -> list[str]:
    names = [t.strip() for t in text.split(",") if t.strip()]
    for name in names:
        if name not in FAMILY_KINDS:
            raise argparse.ArgumentTypeError(
                f"unknown family {name!r}, expected from {FAMILY_KINDS}")
    if not names:
        raise argparse.ArgumentTypeError("empty family list")
    return names


def _load_model(args) -> TrajectoryModel:
    ckpt = Path(args.checkpoint)
    cfg_path = Path(args.config) if args.config else ckpt.parent / "config.json"
    cfg = TrainConfig.load(cfg_path) if cfg_path.exists() else None
    return TrajectoryModel.from_checkpoint(ckpt, cfg)


def _overrides_from_flags(args) -> dict | None:
    overrides = {}
    if args.offset_z0 is not None:
        overrides["z0"] = {"mode": "offset", "value": args.offset_z0}
    if args.set_z0 is not None:
        overrides["z0"] = {"mode": "set", "value": args.set_z0}
    if args.offset_sem is not None:
        overrides["sem"] = {"mode": "offset", "value": args.offset_sem}
    if args.set_sem is not None:
        overrides["sem"] = {"mode": "set", "value": args.set_sem}
    return overrides or None


def _pick_scenario(scenarios, scenario_id: str):
    for s in scenarios:
        if s.id == scenario_id:
            return s
    raise LookupError(f"unknown scenario id {scenario_id!r}")


# --- subcommands --------------------------------------------------------------


def cmd_gen_data(args) -> int:
    out = []
    for offset, name in enumerate(args.families):
        family = DEFAULT_FAMILIES[name]
        if args.noise_level is not None:
            family = dataclasses.replace(family, noise_level=args.noise_level)
        out.extend(generate_scenarios(family, args.count_per_family,
                                      args.seed + offset,
                                      k=args.history_steps, T=args.horizon))
    order = np.random.default_rng(args.seed).permutation(len(out))
    scenarios = [out[i] for i in order]
    save_dataset(scenarios, args.out)
    print(f"wrote {len(scenarios)} scenarios "
          f"({len(args.families)} families) to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    scenarios = load_dataset(args.data)
    cfg = TrainConfig(
        T=min(s.horizon for s in scenarios),
        k=scenarios[0].k,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        momentum=args.momentum,
        lambda_reg=args.lambda_reg,
        lambda_kin=args.lambda_kin,
        kin_warmup_epochs=args.kin_warmup_epochs,
        kin_ramp_epochs=args.kin_ramp_epochs,
        kin_lambda_floor=args.kin_lambda_floor,
        lr_decay_epoch=args.lr_decay_epoch,
        lr_decay_factor=args.lr_decay_factor,
        epochs=args.epochs,
        seed=args.seed,
        val_fraction=args.val_fraction,
    )
    model = TrajectoryModel(cfg)
    log = None if args.quiet else print
    result = train(model, scenarios, args.out_dir, log=log)
    best = result.best_val_ade
    print(f"trained {cfg.epochs} epochs in {result.seconds:.1f}s; "
          f"best val ADE {best:.4f} at epoch {result.best_epoch}; "
          f"checkpoints in {args.out_dir}")
    return EXIT_OK


def cmd_predict(args) -> int:
    scenarios = load_dataset(args.data)
    if args.limit is not None:
        scenarios = scenarios[:args.limit]
    if not scenarios:
        raise ValueError("no scenarios to predict")
    model = _load_model(args)
    preds = model.predict_batch(scenarios)
    per = [ade_fde(preds[i], s.future_truth) for i, s in enumerate(scenarios)]
    ade = float(np.mean([p[0] for p in per]))
    fde = float(np.mean([p[1] for p in per]))
    doc = {
        "n_scenarios": len(scenarios),
        "ade": ade,
        "fde": fde,
        "predictions": [
            {"scenario_id": s.id, "family": s.family,
             "waypoints": preds[i].tolist()}
            for i, s in enumerate(scenarios)
        ],
    }
    Path(args.out).write_text(payload_json(doc), encoding="utf-8")
    print(f"ADE {ade:.4f}  FDE {fde:.4f}  over {len(scenarios)} scenarios -> {args.out}")
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.scenario_file:
        with open(args.scenario_file, "r", encoding="utf-8") as fh:
            scenario = scenario_from_record(json.load(fh))
    else:
        if not args.data or not args.scenario_id:
            print("error: need either --scenario-file or both --data and --scenario-id",
                  file=sys.stderr)
            return EXIT_USAGE
        scenario = _pick_scenario(load_dataset(args.data), args.scenario_id)
    model = _load_model(args)
    payload = generation_payload(
        model, scenario,
        num_samples=args.num_samples,
        noise_seed=args.noise_seed,
        latent_overrides=_overrides_from_flags(args),
    )
    text = payload_json(payload)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        print(f"wrote {args.num_samples} trajectories to {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_sweep(args) -> int:
    scenario = _pick_scenario(load_dataset(args.data), args.scenario_id)
    model = _load_model(args)
    lo, hi, n = args.range
    values = np.linspace(lo, hi, n)
    component_index = SWEEP_COMPONENTS.index(args.component)
    target = "z0" if component_index < 4 else "sem"

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = []
    for value in values:
        vec = [0.0, 0.0, 0.0, 0.0]
        vec[component_index % 4] = float(value)
        payload = generation_payload(
            model, scenario,
            num_samples=args.num_samples,
            noise_seed=args.noise_seed,
            latent_overrides={target: {"mode": "offset", "value": vec}},
        )
        runs.append({"offset": float(value), "result": payload})

    doc = {
        "scenario_id": scenario.id,
        "component": args.component,
        "offsets": values.tolist(),
        "runs": runs,
    }
    (out_dir / "sweep.json").write_text(payload_json(doc), encoding="utf-8")

    trajs = [np.asarray(t) for r in runs for t in r["result"]["trajectories"]]
    stats = jerk_stats(trajs, model.config.delta)
    (out_dir / "jerk_hist.csv").write_text(
        histogram_csv(stats.counts, stats.bin_edges), encoding="utf-8")

    steering = np.concatenate(
        [np.asarray(r["result"]["controls"]["u2_normalized"]).ravel() for r in runs])
    counts, edges = np.histogram(steering, bins=50)
    (out_dir / "steering_hist.csv").write_text(
        histogram_csv(counts, edges), encoding="utf-8")

    print(f"swept {args.component} over {n} offsets in [{lo}, {hi}] -> {out_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    scenarios = load_dataset(args.data)
    if not scenarios:
        raise ValueError("dataset holds no scenarios")
    model = _load_model(args)
    delta = model.config.delta

    preds = model.predict_batch(scenarios)
    per = [ade_fde(preds[i], s.future_truth) for i, s in enumerate(scenarios)]
    ade = float(np.mean([p[0] for p in per]))
    fde = float(np.mean([p[1] for p in per]))
    cv = cv_baseline_ade(scenarios, delta)

    truth_stats = jerk_stats([s.future_truth for s in scenarios], delta)
    pred_stats = jerk_stats(list(preds), delta)

    doc = {
        "n_scenarios": len(scenarios),
        "ade": ade,
        "fde": fde,
        "cv_ade": cv,
        "ade_gain_vs_cv": float(1.0 - ade / cv) if cv > 0 else 0.0,
        "violation_rate": truth_stats.violation_rate,
        "mean_abs_jerk": truth_stats.mean_abs_jerk,
        "predicted_violation_rate": pred_stats.violation_rate,
        "predicted_mean_abs_jerk": pred_stats.mean_abs_jerk,
    }
    Path(args.out).write_text(payload_json(doc), encoding="utf-8")
    print(f"ADE {ade:.4f} (CV {cv:.4f})  FDE {fde:.4f}  "
          f"truth jerk violation {truth_stats.violation_rate:.4f} -> {args.out}")
    return EXIT_OK


def cmd_serve(args) -> int:
    scenarios = load_dataset(args.data)
    model = _load_model(args)
    server = make_server(model, scenarios, host=args.host, port=args.port)
    host, port = server.server_address[:2]
    print(f"serving {len(scenarios)} scenarios on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


# --- parser -------------------------------------------------------------------


def _add_model_flags(p) -> None:
    p.add_argument("--checkpoint", required=True, help="model weights JSON")
    p.add_argument("--config", default=None,
                   help="config JSON (default: config.json next to the checkpoint)")


def build_parser() -> _Parser:
    defaults = TrainConfig()
    parser = _Parser(prog="kinsde", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize a scenario dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count-per-family", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--families", type=_family_list, default=list(FAMILY_KINDS))
    p.add_argument("--noise-level", type=float, default=None,
                   help="override the per-family observation noise")
    p.add_argument("--history-steps", type=int, default=defaults.k)
    p.add_argument("--horizon", type=int, default=defaults.T)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--epochs", type=int, default=defaults.epochs)
    p.add_argument("--batch-size", type=int, default=defaults.batch_size)
    p.add_argument("--learning-rate", type=float, default=defaults.learning_rate)
    p.add_argument("--momentum", type=float, default=defaults.momentum)
    p.add_argument("--lambda-reg", type=float, default=defaults.lambda_reg)
    p.add_argument("--lambda-kin", type=float, default=defaults.lambda_kin)
    p.add_argument("--kin-warmup-epochs", type=int, default=defaults.kin_warmup_epochs)
    p.add_argument("--kin-ramp-epochs", type=int, default=defaults.kin_ramp_epochs)
    p.add_argument("--kin-lambda-floor", type=float, default=defaults.kin_lambda_floor)
    p.add_argument("--lr-decay-epoch", type=int, default=defaults.lr_decay_epoch)
    p.add_argument("--lr-decay-factor", type=float, default=defaults.lr_decay_factor)
    p.add_argument("--val-fraction", type=float, default=defaults.val_fraction)
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="noise-free predictions plus ADE/FDE report")
    p.add_argument("--data", required=True)
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--limit", type=int, default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("generate", help="sample trajectories with latent overrides")
    _add_model_flags(p)
    p.add_argument("--data", default=None)
    p.add_argument("--scenario-id", default=None)
    p.add_argument("--scenario-file", default=None,
                   help="JSON file holding a single scenario record")
    p.add_argument("--num-samples", type=int, default=1)
    p.add_argument("--noise-seed", type=int, default=0)
    z0 = p.add_mutually_exclusive_group()
    z0.add_argument("--offset-z0", type=_four_floats, default=None,
                    metavar="X,Y,V,PSI")
    z0.add_argument("--set-z0", type=_four_floats, default=None,
                    metavar="X,Y,V,PSI")
    sem = p.add_mutually_exclusive_group()
    sem.add_argument("--offset-sem", type=_four_floats, default=None,
                     metavar="A,B,C,D")
    sem.add_argument("--set-sem", type=_four_floats, default=None,
                     metavar="A,B,C,D")
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("sweep", help="fan one latent component across a grid")
    _add_model_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--scenario-id", required=True)
    p.add_argument("--component", required=True, choices=SWEEP_COMPONENTS)
    p.add_argument("--range", required=True, type=_range_spec, metavar="LO:HI:N")
    p.add_argument("--num-samples", type=int, default=1)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="metrics report for a dataset + checkpoint")
    p.add_argument("--data", required=True)
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="blocking HTTP server for the explorer UI")
    _add_model_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8793)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (json.JSONDecodeError, ValueError, LookupError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
