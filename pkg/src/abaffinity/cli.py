"""Command-line entry point.

Subcommands cover the whole pipeline: preprocess, embed, train, eval,
predict, gradcheck. Configuration precedence is flags > --config JSON >
defaults, and the merged effective configuration is echoed next to every
output artifact.

Exit codes: 0 success; 2 usage; 3 unreadable input/bad file format;
4 data rejected (zero retained, degenerate values, undefined metric);
5 infeasible split; 6 configuration mismatch; 7 missing embedding id;
8 non-finite values/training divergence; 9 gradient check failure.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataio, embedding, metrics, model, train as train_mod
from .errors import AffinityError, ConfigError, InputError
from .gradcheck import model_gradcheck
from .model import ModelConfig, init_params, load_checkpoint, save_checkpoint
from .train import TrainConfig

EXIT_GRADCHECK_FAILED = 9


def _echo_config(target: Path, payload: dict) -> None:
    path = (target / "effective_config.json" if target.is_dir()
            else target.with_name(target.name + ".config.json"))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_config_file(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file not found: {p}")
    with open(p, encoding="utf-8") as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - {"model", "train"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    return cfg


def _parse_fractions(text):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(f"fractions must be three comma-separated values, "
                          f"got '{text}'")
    return tuple(parts)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    columns = {"antigen": args.antigen_col, "heavy": args.heavy_col,
               "light": args.light_col, "kd": args.kd_col}
    fractions = _parse_fractions(args.fractions)
    ds, dropped = dataio.preprocess_csv(args.input, seed=args.seed,
                                        fractions=fractions, columns=columns)
    out = Path(args.out)
    dataio.write_dataset(out, ds, dropped)
    _echo_config(out, {"command": "preprocess", "input": str(args.input),
                       "seed": args.seed, "fractions": list(fractions),
                       "columns": columns})
    print(f"dataset written to {out}")
    for name in ("train", "val", "test"):
        print(f"  {name}: {len(ds.split(name))} records")
    total_dropped = sum(dropped.values())
    print(f"  dropped: {total_dropped}"
          + (f" ({', '.join(f'{k}={v}' for k, v in sorted(dropped.items()))})"
             if total_dropped else ""))
    return 0


def cmd_embed(args) -> int:
    ds = dataio.load_dataset(args.dataset)
    ids = dataio.unique_sequence_ids(ds)
    if args.mode == "synthetic":
        if args.d_e is None:
            raise ConfigError("synthetic mode requires --d-e")
        records = [
            (sid, embedding.synthetic_embed(
                dataio.tokenize_display(ds.sequences[sid][1]),
                args.d_e, args.seed))
            for sid in ids
        ]
    else:
        if not getattr(args, "from"):
            raise ConfigError("import mode requires --from")
        source = embedding.read_embedding_file(getattr(args, "from"))
        missing = source.missing_ids(ids)
        if missing:
            raise embedding.MissingEmbeddingError(
                f"import file lacks {len(missing)} dataset ids: "
                f"{missing[:10]}{'...' if len(missing) > 10 else ''}")
        records = [(sid, source.lookup(sid)) for sid in ids]
    embedding.write_embedding_file(args.out, records)
    _echo_config(Path(args.out), {
        "command": "embed", "dataset": str(args.dataset), "mode": args.mode,
        "d_e": args.d_e, "seed": args.seed,
        "from": getattr(args, "from") or None})
    print(f"wrote {len(records)} embeddings to {args.out}")
    return 0


def _build_configs(args, store):
    file_cfg = _load_config_file(args.config)
    model_cfg = dict(file_cfg.get("model", {}))
    train_cfg = dict(file_cfg.get("train", {}))
    if args.variant is not None:
        model_cfg["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        train_cfg["seed"] = args.seed
    model_cfg.setdefault("d_e", store.d_e)
    mc = ModelConfig.from_dict(model_cfg)
    tc = TrainConfig.from_dict(train_cfg)
    if mc.d_e != store.d_e:
        raise ConfigError(f"model d_e={mc.d_e} does not match embedding "
                          f"file width {store.d_e}")
    return mc, tc


def cmd_train(args) -> int:
    ds = dataio.load_dataset(args.dataset)
    store = embedding.read_embedding_file(args.embeddings)
    mc, tc = _build_configs(args, store)
    result = train_mod.train(mc, tc, ds, store, log=print)
    save_checkpoint(args.out, result.params, extra={
        "scaler": ds.scaler.to_dict(),
        "train": tc.to_dict(),
        "embeddings": {"path": str(args.embeddings), "d_e": store.d_e},
        "best_epoch": result.best_epoch,
        "best_val_rmse": result.best_val_rmse,
    })
    train_mod.write_curve_csv(args.curves, result.curve)
    effective = {"command": "train", "model": mc.to_dict(), "train": tc.to_dict(),
                 "dataset": str(args.dataset), "embeddings": str(args.embeddings)}
    _echo_config(Path(args.out), effective)
    _echo_config(Path(args.curves), effective)
    print(f"best epoch {result.best_epoch}: "
          f"val_rmse={result.best_val_rmse:.6f}")
    print(f"checkpoint -> {args.out}")
    print(f"curves -> {args.curves}")
    return 0


def cmd_eval(args) -> int:
    params, extra = load_checkpoint(args.checkpoint)
    ds = dataio.load_dataset(args.dataset)
    store = embedding.read_embedding_file(args.embeddings)
    if store.d_e != params.config.d_e:
        raise ConfigError(f"embedding width {store.d_e} does not match "
                          f"checkpoint d_e={params.config.d_e}")
    records = ds.split(args.split)
    if not records:
        raise InputError(f"split '{args.split}' is empty")
    preds = train_mod.predict_records(params, records, store)
    report = metrics.build_report(
        pred_std=preds,
        target_std=[r.pkd_std for r in records],
        target_pkd=[r.pkd for r in records],
        scaler=ds.scaler,
        scale=args.scale,
        auc_policy=args.auc_policy,
        split=args.split,
    )
    for warning in report.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(report.to_json())
    out = Path(args.out) if args.out else Path(args.checkpoint).with_name(
        Path(args.checkpoint).stem + f".eval-{args.split}.json")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    _echo_config(out, {"command": "eval", "checkpoint": str(args.checkpoint),
                       "split": args.split, "scale": args.scale,
                       "auc_policy": args.auc_policy})
    return 0


def cmd_predict(args) -> int:
    params, extra = load_checkpoint(args.checkpoint)
    d_e = params.config.d_e
    antigen_tokens = dataio.tokenize(dataio.clean_sequence(args.antigen))
    antibody_tokens = dataio.combine_antibody(
        dataio.tokenize(dataio.clean_sequence(args.heavy)),
        dataio.tokenize(dataio.clean_sequence(args.light)))
    if args.synthetic:
        if args.d_e is not None and args.d_e != d_e:
            raise ConfigError(f"--d-e {args.d_e} does not match checkpoint "
                              f"d_e={d_e}")
        ag_values = embedding.synthetic_embed(antigen_tokens, d_e, args.seed)
        ab_values = embedding.synthetic_embed(antibody_tokens, d_e, args.seed)
    else:
        if not args.embeddings:
            raise ConfigError("predict needs --embeddings or --synthetic")
        store = embedding.read_embedding_file(args.embeddings)
        if store.d_e != d_e:
            raise ConfigError(f"embedding width {store.d_e} does not match "
                              f"checkpoint d_e={d_e}")
        ag_id = dataio.sequence_id("antigen",
                                   dataio.detokenize(antigen_tokens))
        ab_id = dataio.sequence_id("antibody",
                                   dataio.detokenize(antibody_tokens))
        ag_values = store.lookup(ag_id)
        ab_values = store.lookup(ab_id)
    score = model.predict(params, ag_values, ab_values)
    scaler_info = extra.get("scaler")
    print(f"standardized score: {score:.6f}")
    if scaler_info:
        scaler = dataio.Scaler.from_dict(scaler_info)
        pkd = float(scaler.invert(score))
        print(f"pKd: {pkd:.6f}")
        print(f"Kd (nM): {dataio.pkd_to_kd(pkd):.6g}")
    else:
        print("pKd: unavailable (checkpoint lacks scaler metadata)")
    return 0


def cmd_gradcheck(args) -> int:
    result = model_gradcheck(d_e=args.d_e, seed=args.seed, h=args.h,
                             precision=args.precision,
                             tol=args.tol,
                             max_per_group=args.samples_per_group)
    print(f"{'parameter group':34} {'max rel err':>12} {'checked':>8}")
    print("-" * 58)
    for r in result.reports:
        flag = "" if r.passed else "  FAIL"
        print(f"{r.name:34} {r.max_rel_err:12.3e} {r.n_checked:8d}{flag}")
    status = "PASS" if result.passed else "FAIL"
    print(f"{status}: worst {result.worst:.3e} over {len(result.reports)} "
          f"groups (seed {result.seed}, {result.seconds:.1f}s)")
    return 0 if result.passed else EXIT_GRADCHECK_FAILED


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="abaffinity",
        description="Sequence-only antigen-antibody affinity regression")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean, split and tokenize a CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fractions", default="0.8,0.1,0.1")
    p.add_argument("--antigen-col", default="antigen_seq")
    p.add_argument("--heavy-col", default="heavy_seq")
    p.add_argument("--light-col", default="light_seq")
    p.add_argument("--kd-col", default="kd_nm")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("embed", help="produce the embedding file for a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=["synthetic", "import"], default="synthetic")
    p.add_argument("--d-e", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--from", dest="from", default=None,
                   help="source embedding file for import mode")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="optimize a model on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--variant", choices=["duadeep", "esm-t", "esm-c"],
                   default=None)
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--curves", required=True, help="learning-curve CSV path")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--auc-policy", default="median",
                   help="median or fixed:<pkd>")
    p.add_argument("--scale", choices=["standardized", "pkd"],
                   default="standardized")
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="score one antigen/antibody pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--antigen", required=True)
    p.add_argument("--heavy", required=True)
    p.add_argument("--light", required=True)
    p.add_argument("--embeddings", default=None)
    p.add_argument("--synthetic", action="store_true")
    p.add_argument("--d-e", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck",
                       help="finite-difference verification of all gradients")
    p.add_argument("--d-e", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--precision", type=int, choices=[32, 64], default=64)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tol", type=float, default=None)
    p.add_argument("--samples-per-group", type=int, default=None)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "gradcheck" and args.tol is None:
        args.tol = 1e-6 if args.precision == 64 else 1e-3
    try:
        return args.func(args)
    except AffinityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
