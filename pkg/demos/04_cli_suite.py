"""Drive the ``ridemix`` command line end to end: train, evaluate, compare.

Equivalent shell session (from the repository root):

    ridemix train --algo qmix --config configs/desk_train.ini --out runs/qmix-desk
    ridemix train --algo idqn --config configs/desk_train.ini --out runs/idqn-desk
    ridemix eval --method qmix --checkpoint runs/qmix-desk --map 10x10 --p 4 --c 2 --n 500
    ridemix compare --suite configs/desk.cfg --out runs/desk.csv --improvements runs/desk-improvements.csv

Run:  python demos/04_cli_suite.py [episodes]
"""

import sys
from pathlib import Path

from ridemix.exp_runner import cli

root = Path(__file__).resolve().parent.parent
episodes = sys.argv[1] if len(sys.argv) > 1 else "10000"
runs = root / "runs"

for algo in ("idqn", "qmix"):
    code = cli([
        "train", "--algo", algo, "--config", str(root / "configs/desk_train.ini"),
        "--episodes", episodes, "--out", str(runs / f"{algo}-desk"),
        "--curve", str(runs / f"{algo}-desk-curve.csv"),
    ])
    print(f"train {algo}: exit {code}")

cli(["eval", "--method", "qmix", "--checkpoint", str(runs / "qmix-desk"),
     "--map", "10x10", "--p", "4", "--c", "2", "--n", "500"])

code = cli([
    "compare", "--suite", str(root / "configs/desk.cfg"),
    "--out", str(runs / "desk.csv"), "--improvements", str(runs / "desk-improvements.csv"),
])
print(f"compare: exit {code}")
print((runs / "desk.csv").read_text())
print((runs / "desk-improvements.csv").read_text())
