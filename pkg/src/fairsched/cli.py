"""Command-line entry point: ``fairsched {datagen,train,eval,bench}``.

Every flag mirrors a key of the JSON config file (``--n-pools`` <-> ``n_pools``).
Values resolve as defaults < top-level config keys < the subcommand's config
section < explicit flags. Exit codes: 0 success, 2 usage, 3 data, 4 numeric.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from fairsched.core import ConfigurationError, DataError, InvalidInputError, NumericError
from fairsched.datagen import (
    CptSet,
    GenConfig,
    chi_square_report,
    dataset_lines,
    default_cpts,
    gen_config_dict,
    generate_dataset,
    read_dataset,
)
from fairsched.evalmetrics import (
    EvalConfig,
    bench_exact,
    bench_matching,
    evaluate_model,
    loglog_slope,
    reference_schedules,
    summarize_bench,
)
from fairsched.learn import LOSS_KINDS, TrainConfig, load_model, save_model, train_config_dict, train_many

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "datagen": {
        "out_dir": "out", "n_pools": 500, "pool_size": 12, "seed": 0, "partition": "individual",
        "n_test": 0, "choice_weights": [0.6, 0.3, 0.1], "chi_samples": 100_000, "cpt_override": None,
    },
    "train": {
        "out_dir": "out", "data": None, "loss": ["owa_dq"], "seeds": [0], "lr": 0.01,
        "batch_size": 64, "epochs": 300, "lam": 10.0, "beta": None, "partition": None,
        "hidden": 64, "patience": 30, "val_fraction": 0.2,
    },
    "eval": {
        "out_dir": "out", "test": None, "checkpoints": [], "partitions": [], "reference": "auto",
        "ls_restarts": 50, "ls_max_iters": 5000, "seed": 0, "beta": [], "train_data": None,
        "seeds": [0], "lr": 0.01, "batch_size": 64, "epochs": 300, "lam": 10.0, "hidden": 64,
        "patience": 30, "val_fraction": 0.2,
    },
    "bench": {"out_dir": "out", "sizes": [4, 6, 8, 12, 24, 48], "repeats": 100, "seed": 0},
}


class UsageError(Exception):
    pass


def parse_seeds(text) -> list[int]:
    """``"1..5"`` -> [1, 2, 3, 4, 5]; ``"1,3"`` -> [1, 3]."""
    if isinstance(text, list):
        return [int(s) for s in text]
    out = []
    for part in str(text).split(","):
        if ".." in part:
            lo, hi = part.split("..")
            out.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            out.append(int(part))
    return out


def _list(cast):
    def parse(text):
        if isinstance(text, list):
            return [cast(t) for t in text]
        return [cast(t) for t in str(text).split(",") if t.strip()]
    return parse


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairsched", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--out-dir")

    p = sub.add_parser("datagen", help="sample train/test datasets")
    common(p)
    p.add_argument("--n-pools", type=int)
    p.add_argument("--pool-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--partition", choices=["individual", "employment", "transportation", "work_hours"])
    p.add_argument("--n-test", type=int)
    p.add_argument("--choice-weights", type=_list(float))
    p.add_argument("--chi-samples", type=int)
    p.add_argument("--cpt-override", help="JSON file replacing some probability tables")

    p = sub.add_parser("train", help="train one model per (loss, seed)")
    common(p)
    p.add_argument("--data", help="training dataset (JSONL)")
    p.add_argument("--loss", type=_list(str))
    p.add_argument("--seeds", type=parse_seeds)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--partition")
    p.add_argument("--hidden", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--val-fraction", type=float)

    p = sub.add_parser("eval", help="evaluate checkpoints on a test set")
    common(p)
    p.add_argument("--test", help="test dataset (JSONL)")
    p.add_argument("--checkpoints", type=_list(str))
    p.add_argument("--partitions", type=_list(str))
    p.add_argument("--reference", choices=["auto", "exact", "local_search", "matching"])
    p.add_argument("--ls-restarts", type=int)
    p.add_argument("--ls-max-iters", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--beta", type=_list(float), help="retrain owa_dq with Moreau smoothing per value")
    p.add_argument("--train-data", help="training dataset for --beta reruns")
    p.add_argument("--seeds", type=parse_seeds)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lam", type=float)
    p.add_argument("--hidden", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--val-fraction", type=float)

    p = sub.add_parser("bench", help="time the matching layer and exhaustive OWA search")
    common(p)
    p.add_argument("--sizes", type=_list(int))
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    return parser


def resolve_config(args: argparse.Namespace) -> dict:
    cmd = args.command
    cfg = dict(DEFAULTS[cmd])
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: malformed config ({exc.msg})") from None
        cfg.update({k: v for k, v in loaded.items() if k in cfg})
        cfg.update({k: v for k, v in loaded.get(cmd, {}).items() if k in cfg})
    for key, value in vars(args).items():
        if key in cfg and value is not None:
            cfg[key] = value
    if "seeds" in cfg:
        cfg["seeds"] = parse_seeds(cfg["seeds"])
    for key in ("loss", "checkpoints", "partitions"):
        if key in cfg and isinstance(cfg[key], str):
            cfg[key] = _list(str)(cfg[key])
    if cmd == "eval" and not isinstance(cfg["beta"], list):
        cfg["beta"] = [cfg["beta"]] if cfg["beta"] is not None else []
    return cfg


def file_hash(path) -> str:
    """Git-style blob hash of a file's content."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _embedded(cfg: dict) -> dict:
    """Run config as stored in outputs; the output location is not part of it."""
    return {k: v for k, v in cfg.items() if k != "out_dir"}


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _write_csv(path: Path, header: list[str], rows: list[list], meta: dict) -> None:
    buf = io.StringIO()
    buf.write("# run_config=" + json.dumps(meta, sort_keys=True, separators=(",", ":")) + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    path.write_text(buf.getvalue())


def _workers(n_jobs: int) -> int:
    try:
        cap = int(os.environ.get("FAIRSCHED_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_jobs))


def _load_cpts(path) -> CptSet:
    base = default_cpts()
    if not path:
        return base
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"CPT override not found: {p}")
    try:
        override = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{p}: malformed CPT override ({exc.msg})") from None
    unknown = set(override) - set(CptSet.TABLES) - {"public_irregular_as", "noshift_as"}
    if unknown:
        raise ConfigurationError(f"unknown CPT tables: {sorted(unknown)}")
    if {"public_irregular_as", "noshift_as"} & set(override):
        base = default_cpts(override.get("public_irregular_as", "DayShift"), override.get("noshift_as", "DayShift"))
    fields = {name: getattr(base, name) for name in CptSet.TABLES}
    fields.update({k: np.asarray(v, dtype=float) for k, v in override.items() if k in CptSet.TABLES})
    return CptSet(**fields, public_irregular_as=base.public_irregular_as, noshift_as=base.noshift_as)


def cmd_datagen(cfg: dict) -> int:
    if cfg["n_pools"] < 1 or cfg["n_test"] < 0:
        raise UsageError("--n-pools must be >= 1 and --n-test >= 0")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    cpts = _load_cpts(cfg["cpt_override"])
    meta = {"command": "datagen", "run_config": _embedded(cfg),
            "inputs": {"cpt_override": file_hash(cfg["cpt_override"])} if cfg["cpt_override"] else {}}
    splits = [("train", cfg["n_pools"], 0)] + ([("test", cfg["n_test"], 1)] if cfg["n_test"] else [])
    for name, count, stream in splits:
        gen = GenConfig(count, cfg["pool_size"], cfg["seed"], tuple(cfg["choice_weights"]),
                        cfg["partition"], stream)
        ds = generate_dataset(gen, cpts)
        ds.metadata.update(meta)
        ds.metadata["gen_config"] = gen_config_dict(gen)
        (out / f"{name}.jsonl").write_text("\n".join(dataset_lines(ds)) + "\n")
        print(f"wrote {out / f'{name}.jsonl'} ({count} pools of {cfg['pool_size']})")
    results = chi_square_report(cpts, cfg["chi_samples"], cfg["seed"])
    failed = [r for r in results if not r.passed]
    print(f"CPT chi-square: {len(results) - len(failed)}/{len(results)} contexts pass at alpha=0.001")
    for r in failed:
        print(f"  FAIL {r.table} | {r.context}: chi2={r.statistic:.2f} dof={r.dof} p={r.p_value:.2e}")
    (out / "datagen_summary.json").write_text(_dump({
        **meta, "chi_square": [r.__dict__ | {"passed": r.passed} for r in results],
    }))
    return EXIT_OK


def _train_configs(cfg: dict, losses, seeds, partition, beta) -> list[TrainConfig]:
    return [
        TrainConfig(loss_kind=loss, learning_rate=cfg["lr"], batch_size=cfg["batch_size"],
                    epochs=cfg["epochs"], seed=seed, lam=cfg["lam"], beta=beta,
                    partition_attribute=partition, hidden=cfg["hidden"], patience=cfg["patience"],
                    val_fraction=cfg["val_fraction"])
        for loss in losses for seed in seeds
    ]


def _run_training(dataset, tcfgs):
    return train_many(dataset, tcfgs, _workers(len(tcfgs)))


def _model_name(tcfg: TrainConfig) -> str:
    name = tcfg.loss_kind if tcfg.beta is None else f"{tcfg.loss_kind}_beta{tcfg.beta:g}"
    return f"{name}_{tcfg.partition_attribute}_seed{tcfg.seed}"


def cmd_train(cfg: dict) -> int:
    if not cfg["data"]:
        raise UsageError("train needs --data")
    data = Path(cfg["data"])
    if not data.exists():
        raise FileNotFoundError(f"dataset file not found: {data}")
    bad = [loss for loss in cfg["loss"] if loss not in LOSS_KINDS]
    if bad or not cfg["seeds"]:
        raise UsageError(f"--loss must be drawn from {LOSS_KINDS} and --seeds nonempty")
    ds = read_dataset(data)
    partition = cfg["partition"] or ds.metadata.get("partition_attribute", "individual")
    tcfgs = _train_configs(cfg, cfg["loss"], cfg["seeds"], partition, cfg["beta"])
    out = Path(cfg["out_dir"])
    for sub in ("checkpoints", "history", "timing"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    meta = {"command": "train", "run_config": _embedded(cfg), "inputs": {"data": file_hash(data)}}
    for tcfg, (model, history) in zip(tcfgs, _run_training(ds, tcfgs)):
        name = _model_name(tcfg)
        save_model(model, out / "checkpoints" / f"{name}.json", {**meta, "train_config": train_config_dict(tcfg)})
        rows = [[e, repr(history.train_loss[e]), repr(history.val_regret[e])] for e in range(len(history))]
        _write_csv(out / "history" / f"{name}.csv", ["epoch", "train_loss", "val_regret"], rows,
                   {**meta, "train_config": train_config_dict(tcfg), "best_epoch": history.best_epoch})
        (out / "timing" / f"{name}.json").write_text(_dump({"wall_clock": history.wall_clock}))
        final = history.train_loss[-1] if len(history) else float("nan")
        print(f"trained {name}: {len(history)} epochs, best epoch {history.best_epoch}, final loss {final:.4f}")
    return EXIT_OK


def _aggregate(reports) -> list[list]:
    groups: dict[tuple[str, str], list] = {}
    for r in reports:
        groups.setdefault((r.model, r.setting), []).append(r)
    rows = []
    for (model, setting), rs in groups.items():
        means = [r.regret_pct_mean for r in rs]
        rows.append([model, setting, repr(float(np.mean(means))), repr(float(np.std(means))),
                     repr(float(np.mean([r.nmpd_mean for r in rs])))])
    return rows


def cmd_eval(cfg: dict) -> int:
    if not cfg["test"]:
        raise UsageError("eval needs --test")
    if not cfg["checkpoints"] and not cfg["beta"]:
        raise UsageError("eval needs --checkpoints and/or --beta")
    if cfg["beta"] and not cfg["train_data"]:
        raise UsageError("--beta reruns owa_dq training and needs --train-data")
    test_path = Path(cfg["test"])
    test = read_dataset(test_path)
    out = Path(cfg["out_dir"])
    (out / "reports").mkdir(parents=True, exist_ok=True)
    inputs = {"test": file_hash(test_path)}
    models = []  # (name, loss_kind, training partition, seed, model)
    for ckpt in cfg["checkpoints"]:
        model, ckpt_cfg = load_model(ckpt)
        inputs[Path(ckpt).name] = file_hash(ckpt)
        tc = ckpt_cfg.get("train_config", {})
        loss = tc.get("loss_kind", "owa_dq")
        name = loss if tc.get("beta") is None else f"{loss}_beta{tc['beta']:g}"
        models.append((name, loss, tc.get("partition_attribute"), tc.get("seed", 0), model))
    if cfg["beta"]:
        train_path = Path(cfg["train_data"])
        if not train_path.exists():
            raise FileNotFoundError(f"dataset file not found: {train_path}")
        inputs["train_data"] = file_hash(train_path)
        train_ds = read_dataset(train_path)
        partition = train_ds.metadata.get("partition_attribute", "individual")
        for beta in cfg["beta"]:
            tcfgs = _train_configs(cfg, ["owa_dq"], cfg["seeds"], partition, float(beta))
            for tcfg, (model, _) in zip(tcfgs, _run_training(train_ds, tcfgs)):
                models.append((f"owa_dq_beta{float(beta):g}", "owa_dq", partition, tcfg.seed, model))
    for _, _, _, _, model in models:
        if model.n_slots != test.n:
            raise DataError(f"checkpoint predicts {model.n_slots} slots but test pools have {test.n}")
    meta = {"command": "eval", "run_config": _embedded(cfg), "inputs": inputs}
    settings = cfg["partitions"] or sorted({m[2] or test.metadata["partition_attribute"] for m in models})
    reports = []
    for setting in settings:
        ecfg = EvalConfig(cfg["reference"], None, cfg["ls_restarts"], cfg["ls_max_iters"], cfg["seed"], setting)
        refs = reference_schedules(test, ecfg)
        for name, loss, trained_on, seed, model in models:
            if not cfg["partitions"] and trained_on and trained_on != setting:
                continue
            rep = evaluate_model(model, test, ecfg, loss, name, refs, [seed])
            reports.append(rep)
            (out / "reports" / f"{name}_{setting}_seed{seed}.json").write_text(
                _dump({**meta, "report": rep.to_dict()}))
            print(f"{name:>20} {setting:>15} seed {seed}: regret {rep.regret_pct_mean:6.2f}% "
                  f"nmpd {rep.nmpd_mean:.4f} (flagged {rep.flagged})")
    _write_csv(out / "eval_summary.csv",
               ["model", "setting", "regret_pct_mean", "regret_pct_std", "nmpd_mean"], _aggregate(reports), meta)
    return EXIT_OK


def cmd_bench(cfg: dict) -> int:
    sizes = [int(n) for n in cfg["sizes"]]
    if cfg["repeats"] < 1 or any(n < 2 for n in sizes):
        raise UsageError("--repeats must be >= 1 and sizes >= 2")
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    match = bench_matching(sizes, cfg["repeats"], cfg["seed"])
    exact_rows = bench_exact(sizes, cfg["repeats"], cfg["seed"])
    exact = {(r["n"], r["repeat"]): r["micros"] for r in exact_rows}
    rows = [[r["n"], r["repeat"], f"{r['micros']:.3f}",
             f"{exact[(r['n'], r['repeat'])]:.3f}" if (r["n"], r["repeat"]) in exact else ""]
            for r in match]
    meta = {"command": "bench", "run_config": _embedded(cfg)}
    _write_csv(out / "bench.csv", ["n", "repeat", "micros", "enum_micros"], rows, meta)
    summary = summarize_bench(match)
    for n, s in summary.items():
        print(f"n={n:4d} matching mean {s['mean']:10.1f} us  p95 {s['p95']:10.1f} us")
    big = [n for n in sizes if n >= 12]
    payload = {**meta, "matching": summary, "enumeration": summarize_bench(exact_rows)}
    if len(big) >= 2:
        payload["matching_loglog_slope"] = loglog_slope(summary, big)
    (out / "bench_summary.json").write_text(_dump(payload))
    return EXIT_OK


COMMANDS = {"datagen": cmd_datagen, "train": cmd_train, "eval": cmd_eval, "bench": cmd_bench}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, InvalidInputError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DataError, ConfigurationError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
