"""Run presets, write their references and print comparison metrics.

    python3 scripts/run_presets.py exp1-small exp2-small [--out runs]
"""

import argparse
import json
from pathlib import Path

from swrpinn.config import load_config
from swrpinn.runner import compare_run, execute_run, reference_table, write_csv


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("presets", nargs="+")
    parser.add_argument("--out", type=Path, default=Path("runs"))
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args()
    for name in args.presets:
        cfg = load_config(name)
        run_dir = args.out / name
        outcome = execute_run(cfg, run_dir, threads=args.threads)
        if outcome.status != 0:
            print(f"{name}: exit {outcome.status}: {outcome.message}")
            continue
        ref = args.out / f"{name}-reference.csv"
        columns, rows = reference_table(cfg)
        write_csv(ref, columns, rows)
        metrics = compare_run(run_dir, ref)
        print(name, json.dumps({k: v for k, v in metrics.items() if k != "interface_jumps"}))


if __name__ == "__main__":
    main()
