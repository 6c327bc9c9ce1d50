"""Run a figure recipe end to end: datagen -> train -> eval (or bench).

    python scripts/reproduce.py configs/fig3_individual.json --out-dir runs/fig3
    python scripts/reproduce.py configs/fig6_bench.json --out-dir runs/fig6

``--quick`` shrinks pools, epochs and seeds for a smoke run.
"""

import argparse
import json
import sys
from pathlib import Path

from fairsched.cli import main as cli


def run(argv):
    print("$ fairsched " + " ".join(argv), flush=True)
    code = cli(argv)
    if code:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("config")
    parser.add_argument("--out-dir", default="runs")
    parser.add_argument("--quick", action="store_true")
    args = parser.parse_args()
    recipe = json.loads(Path(args.config).read_text())
    out = Path(args.out_dir)
    quick = ["--epochs", "10", "--seeds", "1..2"] if args.quick else []

    if "bench" in recipe:
        run(["bench", "--config", args.config, "--out-dir", str(out / "bench")]
            + (["--repeats", "5"] if args.quick else []))
        return

    for setting in recipe["settings"]:
        data, models, evals = out / setting / "data", out / setting / "train", out / setting / "eval"
        run(["datagen", "--config", args.config, "--out-dir", str(data), "--partition", setting]
            + (["--n-pools", "40", "--n-test", "20", "--chi-samples", "10000"] if args.quick else []))
        run(["train", "--config", args.config, "--data", str(data / "train.jsonl"), "--out-dir", str(models)]
            + quick)
        ckpts = ",".join(str(p) for p in sorted((models / "checkpoints").glob("*.json")))
        extra = ["--train-data", str(data / "train.jsonl")] if recipe.get("eval", {}).get("beta") else []
        run(["eval", "--config", args.config, "--test", str(data / "test.jsonl"), "--checkpoints", ckpts,
             "--out-dir", str(evals)] + extra + quick + (["--ls-restarts", "10"] if args.quick else []))
        print((evals / "eval_summary.csv").read_text())


if __name__ == "__main__":
    main()
