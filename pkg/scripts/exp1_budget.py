"""Training-budget study for the exp1 desk-scale run.

Runs exp1-small as shipped and with a few optimizer budgets, then prints the
residual history and the L2 error against the characteristics solution.

    python3 scripts/exp1_budget.py [--out DIR] [--quick]
"""

import argparse
import tempfile
import time
from pathlib import Path

from swrpinn.config import resolve_config
from swrpinn.runner import compare_run, execute_run, read_csv, reference_table, write_csv

VARIANTS = {
    "as shipped (sgd 1e-3, decay 5e-3, 3 epochs)": {},
    "sgd 1e-3, 30 epochs": {"optimizer": {"epochs": 30}},
    "sgd 1e-2, 3 epochs": {"optimizer": {"lr0": 1e-2}},
    "sgd 1e-2, no decay, 30 epochs": {"optimizer": {"lr0": 1e-2, "decay": 0.0, "epochs": 30}},
    "adam 1e-3, 3 epochs": {"optimizer": {"kind": "adam", "decay": 0.0}},
    "adam 3e-3, 25 epochs": {"optimizer": {"kind": "adam", "lr0": 3e-3, "decay": 0.0, "epochs": 25}},
}


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, help="keep run directories here")
    parser.add_argument("--quick", action="store_true", help="only the shipped budget and the Adam one")
    args = parser.parse_args()
    root = args.out or Path(tempfile.mkdtemp(prefix="exp1-budget-"))
    names = list(VARIANTS)
    if args.quick:
        names = [names[0], names[-1]]
    for i, name in enumerate(names):
        cfg = resolve_config({"extends": "exp1-small", **VARIANTS[name]})
        run_dir = root / f"variant{i}"
        t0 = time.perf_counter()
        execute_run(cfg, run_dir)
        secs = time.perf_counter() - t0
        columns, rows = reference_table(cfg, "characteristics")
        write_csv(root / "characteristics.csv", columns, rows)
        metrics = compare_run(run_dir, root / "characteristics.csv")
        head, data = read_csv(run_dir / "residuals.csv")
        res = ", ".join(f"{v:.3g}" for v in data[:, head.index("residual")])
        print(f"{name:<44} L2 {metrics['l2_error']:.3g}  {secs:6.1f}s  E(k): {res}")
    print(f"run directories under {root}")


if __name__ == "__main__":
    main()
