"""Command-line entry points.

Subcommands:

  generate-data    write a synthetic shock dataset (4 files) to --out
  train            fit one variant on a dataset directory
  evaluate         score a checkpoint on a split, original units
  ablate           train and score all five variants with shared settings
  mask-stats       gate statistics of a checkpoint over a split
  nfe-report       verify the 2-evaluations-per-step budget and the FLOP sweep
  intersect-demo   show that jumps let trajectories cross where the smooth
                   flow cannot; prints PASS or FAIL as its last line

Settings resolve in three layers: built-in defaults, then a --config file of
`key=value` lines, then explicit flags.  The resolved values are written to
resolved_config.txt next to the outputs.  All outputs are deterministic for a
given input and seed; running a command twice produces identical bytes.

Exit codes: 0 success, 1 usage, 2 bad input data, 3 numeric or internal
invariant violation.  Failures print a single `error[kind]: message` line to
stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .autodiff import Tensor
from .data import (ShockScenario, build_dataset, default_graph,
                   generate_shock_series, load_dataset_files,
                   write_dataset_files)
from .dynamics import MASK_MODES, CompensatorParams, VectorFieldParams, evolve
from .errors import (ContractError, DimensionError, NumericError, ParseError,
                     ValidationError)
from .graph import SpatialGraph, normalize_adjacency
from .model import (ModelConfig, flop_report, forward, init_params,
                    load_checkpoint, save_checkpoint)
from .training import (VARIANTS, TrainConfig, evaluate, mask_report, train,
                       write_history_csv)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

# most specific first; ParseError subclasses ValidationError
ERROR_MAP = (
    (ParseError, "parse", EXIT_DATA),
    (ValidationError, "validation", EXIT_DATA),
    (NumericError, "numeric", EXIT_NUMERIC),
    (ContractError, "contract", EXIT_NUMERIC),
    (DimensionError, "dimension", EXIT_NUMERIC),
    (OSError, "io", EXIT_DATA),
)


# ---------------------------------------------------------------------------
# layered configuration
# ---------------------------------------------------------------------------

_OPTIONAL_FLOAT = "optional_float"

KEY_TYPES = {
    "amplitude": float, "batch_size": int, "clip_norm": float,
    "diffusion": float, "embed_dim": int, "epochs": int, "horizon": int,
    "in_dim": int, "lam": float, "lr": float, "mask_grad": bool,
    "n_nodes": int, "patience": int, "period": float, "proj_dim": int,
    "seed": int, "shock_decay": float, "shock_mag_hi": float,
    "shock_mag_lo": float, "shock_rate": float, "sparsity_tau": _OPTIONAL_FLOAT,
    "steps": int, "stride": int, "tick_seconds": int, "total_t": int,
    "variant": str, "window": int,
}

DEFAULTS = {
    "amplitude": 1.0, "batch_size": 32, "clip_norm": 5.0, "diffusion": 0.05,
    "embed_dim": 10, "epochs": 50, "horizon": 12, "in_dim": 1, "lam": 0.0,
    "lr": 0.003, "mask_grad": False, "n_nodes": 20, "patience": 10,
    "period": 100.0, "proj_dim": 30, "seed": 0, "shock_decay": 12.0,
    "shock_mag_hi": 8.0, "shock_mag_lo": 3.0, "shock_rate": 1.0,
    "sparsity_tau": None, "steps": 4, "stride": 1, "tick_seconds": 300,
    "total_t": 2000, "variant": "full", "window": 12,
}

GENERATE_KEYS = ("amplitude", "diffusion", "n_nodes", "period", "seed",
                 "shock_decay", "shock_mag_hi", "shock_mag_lo", "shock_rate",
                 "tick_seconds", "total_t")
TRAIN_KEYS = ("batch_size", "clip_norm", "embed_dim", "epochs", "horizon",
              "lam", "lr", "mask_grad", "patience", "proj_dim", "seed",
              "sparsity_tau", "steps", "stride", "variant", "window")
ABLATE_KEYS = tuple(k for k in TRAIN_KEYS if k != "variant")
EVAL_KEYS = ("batch_size", "stride")
NFE_KEYS = ("embed_dim", "horizon", "n_nodes", "proj_dim", "seed", "steps",
            "window")


def _coerce(key: str, raw: str):
    kind = KEY_TYPES[key]
    try:
        if kind is bool:
            low = raw.strip().lower()
            if low in ("true", "1"):
                return True
            if low in ("false", "0"):
                return False
            raise ValueError(f"expected true/false, got {raw!r}")
        if kind is _OPTIONAL_FLOAT:
            low = raw.strip().lower()
            return None if low == "none" else float(raw)
        return kind(raw)
    except ValueError as exc:
        raise ValidationError(f"config key '{key}': {exc}") from exc


def _format_value(value) -> str:
    if value is None:
        return "none"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_file(path, allowed) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ParseError(f"{path}: line {lineno}: expected key=value")
            key, _, raw = text.partition("=")
            key = key.strip()
            if key not in KEY_TYPES:
                raise ParseError(f"{path}: line {lineno}: unknown key '{key}'")
            if key not in allowed:
                raise ParseError(
                    f"{path}: line {lineno}: key '{key}' does not apply here")
            values[key] = _coerce(key, raw.strip())
    return values


def resolve_settings(args, keys, defaults=None) -> dict:
    """defaults, then --config file values, then explicit flags."""
    base = dict(DEFAULTS if defaults is None else defaults)
    resolved = {k: base[k] for k in keys}
    if getattr(args, "config", None):
        resolved.update(parse_config_file(args.config, set(keys)))
    for key in keys:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = _coerce(key, flag_value)
    return resolved


def write_resolved(out_dir, settings: dict) -> None:
    path = os.path.join(out_dir, "resolved_config.txt")
    with open(path, "w") as fh:
        for key in sorted(settings):
            fh.write(f"{key}={_format_value(settings[key])}\n")


def add_setting_flags(parser, keys) -> None:
    for key in sorted(keys):
        parser.add_argument("--" + key.replace("_", "-"), dest=key,
                            default=None, metavar="V",
                            help=f"override '{key}' "
                                 f"(default {_format_value(DEFAULTS[key])})")


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_generate_data(args) -> int:
    cfg = resolve_settings(args, GENERATE_KEYS)
    scenario = ShockScenario(
        n_nodes=cfg["n_nodes"], total_t=cfg["total_t"],
        amplitude=cfg["amplitude"], period=cfg["period"],
        diffusion=cfg["diffusion"], shock_rate=cfg["shock_rate"],
        shock_mag_lo=cfg["shock_mag_lo"], shock_mag_hi=cfg["shock_mag_hi"],
        shock_decay=cfg["shock_decay"], seed=cfg["seed"])
    graph = default_graph(cfg["n_nodes"], seed=cfg["seed"])
    series, events = generate_shock_series(scenario, graph)
    os.makedirs(args.out, exist_ok=True)
    paths = write_dataset_files(args.out, scenario, graph, series, events,
                                tick_seconds=cfg["tick_seconds"])
    write_resolved(args.out, cfg)
    print(f"wrote {paths['series']} ({scenario.total_t} ticks, "
          f"{scenario.n_nodes} nodes)")
    print(f"wrote {paths['events']} ({len(events)} shocks)")
    print(f"wrote {paths['edges']} ({len(graph.edges)} edges)")
    print(f"wrote {paths['meta']}")
    return EXIT_OK


def _load_for_model(data_dir, window, horizon, stride):
    series, events, graph, meta = load_dataset_files(data_dir)
    if meta["in_dim"] != 1:
        raise ValidationError(f"{data_dir}: only in_dim=1 data is supported")
    dataset = build_dataset(series, events, graph,
                            window=window, horizon=horizon, stride=stride)
    return dataset, meta


def _model_config(cfg, meta, variant) -> ModelConfig:
    return ModelConfig(
        n_nodes=meta["n_nodes"], in_dim=meta["in_dim"],
        window=cfg["window"], horizon=cfg["horizon"],
        proj_dim=cfg["proj_dim"], embed_dim=cfg["embed_dim"],
        steps=cfg["steps"], mask_mode=VARIANTS[variant],
        mask_grad=cfg["mask_grad"], sparsity_tau=cfg["sparsity_tau"])


def _train_config(cfg, variant, lam) -> TrainConfig:
    return TrainConfig(
        variant=variant, lam=lam, lr=cfg["lr"], epochs=cfg["epochs"],
        batch_size=cfg["batch_size"], seed=cfg["seed"],
        patience=cfg["patience"], clip_norm=cfg["clip_norm"])


def cmd_train(args) -> int:
    cfg = resolve_settings(args, TRAIN_KEYS)
    variant = cfg["variant"]
    if variant not in VARIANTS:
        raise ValidationError(f"unknown variant '{variant}'")
    dataset, meta = _load_for_model(args.data, cfg["window"], cfg["horizon"],
                                    cfg["stride"])
    model_config = _model_config(cfg, meta, variant)
    train_config = _train_config(cfg, variant, cfg["lam"])
    os.makedirs(args.out, exist_ok=True)
    log = None if args.quiet else print
    result = train(dataset, model_config, train_config, log=log)
    save_checkpoint(os.path.join(args.out, "checkpoint.json"),
                    result.params, model_config)
    write_history_csv(os.path.join(args.out, "history.csv"), result.history)
    write_resolved(args.out, cfg)
    print(f"variant={variant}")
    print(f"param_count={result.params.count}")
    print(f"best_epoch={result.best_epoch}")
    print(f"best_val_mae={result.best_val_mae!r}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = resolve_settings(args, EVAL_KEYS)
    params, model_config = load_checkpoint(args.checkpoint)
    dataset, meta = _load_for_model(args.data, model_config.window,
                                    model_config.horizon, cfg["stride"])
    if meta["n_nodes"] != model_config.n_nodes:
        raise ValidationError(
            f"checkpoint expects {model_config.n_nodes} nodes, "
            f"data has {meta['n_nodes']}")
    report = evaluate(params, model_config, dataset, split=args.split,
                      batch_size=cfg["batch_size"])
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "metrics.json"),
               {"split": args.split, "count": report.count, "mae": report.mae,
                "rmse": report.rmse, "mape": report.mape})
    write_resolved(args.out, cfg)
    print(f"split={args.split} windows={report.count}")
    print(f"mae={report.mae!r}")
    print(f"rmse={report.rmse!r}")
    print(f"mape={report.mape!r}")
    return EXIT_OK


ABLATION_ORDER = ("full", "no_lte", "no_compensation", "no_mask",
                  "manifold_penalty")


def cmd_ablate(args) -> int:
    cfg = resolve_settings(args, ABLATE_KEYS,
                           defaults={**DEFAULTS, "lam": 0.1})
    dataset, meta = _load_for_model(args.data, cfg["window"], cfg["horizon"],
                                    cfg["stride"])
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for variant in ABLATION_ORDER:
        model_config = _model_config(cfg, meta, variant)
        lam = cfg["lam"] if variant == "manifold_penalty" else 0.0
        train_config = _train_config(cfg, variant, lam)
        result = train(dataset, model_config, train_config, log=None)
        report = evaluate(result.params, model_config, dataset, split="test",
                          batch_size=cfg["batch_size"])
        if model_config.mask_mode == "off":
            m_mean = m_std = float("nan")
        else:
            masks = mask_report(result.params, model_config, dataset,
                                split="test", batch_size=cfg["batch_size"])
            m_mean, m_std = masks.mean, masks.std
        save_checkpoint(os.path.join(args.out, f"checkpoint_{variant}.json"),
                        result.params, model_config)
        rows.append((variant, result.params.count, report.mae, report.rmse,
                     report.mape, m_mean, m_std))
        print(f"variant={variant} params={result.params.count} "
              f"mae={report.mae!r} rmse={report.rmse!r} mape={report.mape!r} "
              f"mask_mean={m_mean!r}")
    with open(os.path.join(args.out, "ablation.csv"), "w", newline="") as fh:
        fh.write("variant,param_count,mae,rmse,mape,mask_mean,mask_std\n")
        for variant, count, mae, rmse, mape, m_mean, m_std in rows:
            fh.write(f"{variant},{count},{mae!r},{rmse!r},{mape!r},"
                     f"{m_mean!r},{m_std!r}\n")
    write_resolved(args.out, cfg)
    return EXIT_OK


def cmd_mask_stats(args) -> int:
    cfg = resolve_settings(args, EVAL_KEYS)
    params, model_config = load_checkpoint(args.checkpoint)
    dataset, meta = _load_for_model(args.data, model_config.window,
                                    model_config.horizon, cfg["stride"])
    if meta["n_nodes"] != model_config.n_nodes:
        raise ValidationError(
            f"checkpoint expects {model_config.n_nodes} nodes, "
            f"data has {meta['n_nodes']}")
    report = mask_report(params, model_config, dataset, split=args.split,
                         batch_size=cfg["batch_size"])
    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "mask_stats.json"),
               {"split": args.split, "mean": report.mean, "std": report.std,
                "p95": report.p95, "histogram": report.histogram,
                "shock_mean": report.shock_mean,
                "nonshock_mean": report.nonshock_mean,
                "shock_p95": report.shock_p95,
                "shock_cells": report.shock_cells,
                "nonshock_cells": report.nonshock_cells})
    write_resolved(args.out, cfg)
    print(f"split={args.split}")
    print(f"mean={report.mean!r}")
    print(f"std={report.std!r}")
    print(f"p95={report.p95!r}")
    print(f"shock_mean={report.shock_mean!r}")
    print(f"nonshock_mean={report.nonshock_mean!r}")
    print(f"shock_cells={report.shock_cells} nonshock_cells={report.nonshock_cells}")
    return EXIT_OK


FLOP_SWEEP_STEPS = (1, 2, 4, 6, 8)


def cmd_nfe_report(args) -> int:
    cfg = resolve_settings(args, NFE_KEYS)
    graph = default_graph(cfg["n_nodes"], seed=cfg["seed"])
    ahat = normalize_adjacency(graph)
    rng = np.random.default_rng(cfg["seed"])
    x = Tensor(rng.standard_normal((2, cfg["n_nodes"], cfg["window"], 1)))
    expected = 2 * cfg["steps"]

    modes = {}
    for mode in MASK_MODES:
        model_config = ModelConfig(
            n_nodes=cfg["n_nodes"], window=cfg["window"], horizon=cfg["horizon"],
            proj_dim=cfg["proj_dim"], embed_dim=cfg["embed_dim"],
            steps=cfg["steps"], mask_mode=mode)
        params = init_params(model_config, seed=cfg["seed"])
        res = forward(x, ahat, params, model_config)
        modes[mode] = {"nfe_static": res.nfe_static,
                       "nfe_adaptive": res.nfe_adaptive, "expected": expected}
        ok = res.nfe_static == expected and res.nfe_adaptive == expected
        print(f"mode={mode} nfe_static={res.nfe_static} "
              f"nfe_adaptive={res.nfe_adaptive} expected={expected} "
              f"{'ok' if ok else 'MISMATCH'}")
        if not ok:
            raise ContractError(
                f"mode '{mode}': measured NFE {res.nfe_static}/"
                f"{res.nfe_adaptive}, expected {expected} per stream")

    base = ModelConfig(n_nodes=cfg["n_nodes"], window=cfg["window"],
                       horizon=cfg["horizon"], proj_dim=cfg["proj_dim"],
                       embed_dim=cfg["embed_dim"], steps=1, mask_mode="lte")
    sweep = []
    for s in FLOP_SWEEP_STEPS:
        rep = flop_report(dataclasses.replace(base, steps=s))
        sweep.append({"steps": s, "solver": rep.solver, "total": rep.total})
        print(f"steps={s} solver_flops={rep.solver} total_flops={rep.total}")
    for a, b in zip(sweep, sweep[1:]):
        if not b["total"] > a["total"]:
            raise ContractError(
                f"total FLOPs not increasing from steps={a['steps']} "
                f"to steps={b['steps']}")
    per_step = sweep[0]["solver"]
    for entry in sweep:
        if entry["solver"] != per_step * entry["steps"]:
            raise ContractError(
                f"solver FLOPs not linear in steps at steps={entry['steps']}")

    os.makedirs(args.out, exist_ok=True)
    write_json(os.path.join(args.out, "nfe_report.json"),
               {"modes": modes, "flop_sweep": sweep})
    write_resolved(args.out, cfg)
    print("nfe-report ok")
    return EXIT_OK


def _write_trajectory_csv(path, states) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("t,node_0,node_1\n")
        for t, state in enumerate(states):
            fh.write(f"{t},{float(state[0, 0, 0])!r},{float(state[0, 1, 0])!r}\n")


def cmd_intersect_demo(args) -> int:
    """Two nodes under one shared scalar field, integrated over unit time.

    Leg one starts both nodes at the same value with the compensator off: a
    shared smooth flow maps equal states to equal states, so the trajectories
    must remain identical, bit for bit.  Leg two starts the nodes mirrored
    and switches a constructed jump on; the state-dependent compensation
    reorders the nodes within one step, which the flow alone can never do.
    """
    steps = 8
    a_op = normalize_adjacency(SpatialGraph(n_nodes=2, edges=[]))
    vf = VectorFieldParams(w_f=Tensor([[0.5]]), b_f=Tensor([0.0]))
    comp = CompensatorParams([(Tensor([[-6.0]]), Tensor([0.0]))
                              for _ in range(steps)])

    leg_off = evolve(Tensor([[[0.2], [0.2]]]), steps, 1.0 / steps, a_op, vf,
                     comp=None, mask_mode="off", collect_states=True)
    leg_on = evolve(Tensor([[[0.05], [-0.05]]]), steps, 1.0 / steps, a_op, vf,
                    comp=comp, mask_mode="lte", collect_states=True)

    off_ok = all(float(s[0, 0, 0]) == float(s[0, 1, 0])
                 for s in leg_off.states)
    d_on = [float(s[0, 0, 0] - s[0, 1, 0]) for s in leg_on.states]
    flip_step = next((t for t, d in enumerate(d_on) if d * d_on[0] < 0), None)
    on_ok = flip_step is not None

    os.makedirs(args.out, exist_ok=True)
    _write_trajectory_csv(os.path.join(args.out, "trajectory_off.csv"),
                          leg_off.states)
    _write_trajectory_csv(os.path.join(args.out, "trajectory_on.csv"),
                          leg_on.states)

    print(f"compensation off: identical nodes stay identical at every step: "
          f"{off_ok}")
    if on_ok:
        print(f"compensation on: mirrored nodes cross at step {flip_step}")
    else:
        print("compensation on: mirrored nodes never cross")
    if off_ok and on_ok:
        print("PASS")
        return EXIT_OK
    print("FAIL")
    return EXIT_NUMERIC


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="odegate",
        description="Graph ODE forecasting with a truncation-error gate "
                    "and discrete shock compensation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, keys, data=False, checkpoint=False, split=False):
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--config", default=None, help="key=value settings file")
        if data:
            p.add_argument("--data", required=True, help="dataset directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="checkpoint file")
        if split:
            p.add_argument("--split", default="test",
                           choices=("train", "val", "test"))
        add_setting_flags(p, keys)

    p = sub.add_parser("generate-data", help="write a synthetic shock dataset")
    common(p, GENERATE_KEYS)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one variant")
    common(p, TRAIN_KEYS, data=True)
    p.add_argument("--quiet", action="store_true", help="suppress epoch lines")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on a split")
    common(p, EVAL_KEYS, data=True, checkpoint=True, split=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score all five variants")
    common(p, ABLATE_KEYS, data=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("mask-stats", help="gate statistics of a checkpoint")
    common(p, EVAL_KEYS, data=True, checkpoint=True, split=True)
    p.set_defaults(func=cmd_mask_stats)

    p = sub.add_parser("nfe-report", help="verify NFE budget and FLOP sweep")
    common(p, NFE_KEYS)
    p.set_defaults(func=cmd_nfe_report)

    p = sub.add_parser("intersect-demo",
                       help="crossing trajectories with and without jumps")
    p.add_argument("--out", default="out", help="output directory")
    p.set_defaults(func=cmd_intersect_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; we reserve 2 for data problems
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return args.func(args)
    except tuple(cls for cls, _, _ in ERROR_MAP) as exc:
        for cls, kind, code in ERROR_MAP:
            if isinstance(exc, cls):
                print(f"error[{kind}]: {exc}", file=sys.stderr)
                return code
        raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
