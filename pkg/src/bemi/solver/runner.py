"""Child-process HiGHS runner used by the ``highs-process`` backend profile.

Usage: ``python -m bemi.solver.runner MODEL.lp TIME_LIMIT SOLUTION_PATH [START_PATH]``

Writes the HiGHS raw solution file to SOLUTION_PATH and a JSON sidecar
(``SOLUTION_PATH.json``) with status, gap and bound. Exit code 0 unless the
model could not be read.
"""

import json
import math
import sys
from pathlib import Path

import highspy
import numpy as np


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) not in (3, 4):
        print(__doc__, file=sys.stderr)
        return 1
    model_path, time_limit, sol_path = argv[:3]
    h = highspy.Highs()
    h.setOptionValue("output_flag", False)
    h.setOptionValue("time_limit", float(time_limit))
    if h.readModel(model_path) == highspy.HighsStatus.kError:
        print(f"cannot read {model_path}", file=sys.stderr)
        return 1
    if len(argv) == 4 and Path(argv[3]).exists():
        names = [h.getColName(i)[1] for i in range(h.getNumCol())]
        col = {n: i for i, n in enumerate(names)}
        start = {}
        for line in Path(argv[3]).read_text().splitlines():
            if line.strip():
                name, value = line.split()
                start[col[name]] = float(value)
        if start:
            idx = np.array(sorted(start), dtype=np.int32)
            h.setSolution(len(idx), idx, np.array([start[i] for i in idx]))
    h.run()
    S = highspy.HighsModelStatus
    ms = h.getModelStatus()
    info = h.getInfo()
    has_sol = info.primal_solution_status == 2
    if ms == S.kOptimal:
        status = "optimal"
    elif ms == S.kInfeasible:
        status = "infeasible"
    elif has_sol:
        status = "feasible-limit"
    else:
        status = "no-incumbent"
    if has_sol:
        h.writeSolution(sol_path, 0)
    meta = {
        "status": status,
        "message": h.modelStatusToString(ms),
        "mip_gap": info.mip_gap if has_sol and math.isfinite(info.mip_gap) else None,
        "dual_bound": info.mip_dual_bound if math.isfinite(info.mip_dual_bound) else None,
        "gap_definition": "HiGHS mip_gap: |primal_bound - dual_bound| / |primal_bound|",
    }
    Path(sol_path + ".json").write_text(json.dumps(meta))
    return 0


if __name__ == "__main__":
    sys.exit(main())
