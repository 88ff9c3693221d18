"""
Driving a full experiment through the command line interface
============================================================

The same entry point as the ``corrbasis`` console script, called in-process:
generate a cohort, fit, predict and cross-validate.  Each command writes
its resolved configuration to ``<out>/config.json``.
"""

import json
import tempfile
from pathlib import Path

from corrbasis.cli import main

work = Path(tempfile.mkdtemp())
fast = ["--K", "3", "--max-outer-iters", "400", "--gamma", "0.01", "--lambda1", "1e-4",
        "--lambda2", "1e-4", "--lambda3", "1e-6", "--line-search"]

# generated signal entries are of order 1e-3, so keep the matrix noise at that scale
main(["synth", "--seed", "2", "--M", "20", "--N", "30", "--K", "3", "--noise", "0.001", "--sigma-y", "0",
      "--out", str(work / "cohort")])
data = ["--matrices", str(work / "cohort" / "matrices"),
        "--scores", str(work / "cohort" / "scores.csv")]

main(["fit", *data, *fast, "--out", str(work / "fit")])
print((work / "fit" / "trace.csv").read_text().splitlines()[-1])

main(["predict", "--matrices", str(work / "cohort" / "matrices"),
      "--checkpoint", str(work / "fit" / "checkpoint.json"), "--out", str(work / "pred")])
print((work / "pred" / "predictions.csv").read_text().splitlines()[:4])

main(["cv", *data, *fast, "--folds", "5", "--out", str(work / "cv")])
print(json.loads((work / "cv" / "report.json").read_text())["aggregates"])

# a failing call prints one machine-readable line and returns a nonzero code
code = main(["fit", "--matrices", str(work / "missing"), "--scores", "nope.csv",
             "--out", str(work / "x")])
print("exit code:", code)
print("outputs under", work)
