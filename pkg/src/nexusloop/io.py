"""CSV/JSON serialization of maps, trajectories and reports."""
from __future__ import annotations

import csv
import json
import math
import os
from enum import Enum

import numpy as np


def fmt(value) -> str:
    """CSV cell text: 17 significant digits for floats, empty for ``None``."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else format(float(value), ".17g")
    return str(value)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(to_jsonable(k)): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(to_jsonable(obj), indent=2, sort_keys=True) + "\n")


def ensure_dir(path) -> str:
    os.makedirs(path, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise PermissionError(f"output directory {path!r} is not writable")
    return path


MAP_HEADER = [
    "power_w", "detuning_rad_s", "real_roots", "stable_roots", "qs_low_m", "qs_mid_m", "qs_high_m",
    "rh_stable_roots", "unphysical_roots", "marginal",
]


def map_rows(rmap):
    for i, pw in enumerate(rmap.p_axis):
        for j, dl in enumerate(rmap.delta_axis):
            c = rmap.cells[i][j]
            roots = sorted(c.roots, key=abs)
            slots = [None, None, None]
            if len(roots) == 3:
                slots = roots
            elif roots:
                slots[0] = roots[0]
            yield [float(pw), float(dl), c.real_roots, c.static_stable, *slots, c.rh_stable, c.unphysical, c.marginal]


TRAJ_HEADER = [
    "theta_rad", "power_w", "detuning_rad_s", "qs_m", "abs_qs_m", "kappa_eff", "delta_eff", "branch", "stable", "e_n",
    "e_n_status",
]


def trajectory_rows(traj):
    for s in traj.samples:
        st = s.state
        yield [
            s.theta, s.drive.power, s.drive.detuning, st.q_s, abs(st.q_s), st.kappa_eff, st.delta_eff,
            st.branch, st.stable, s.e_n, s.e_n_status,
        ]


def jump_record(j):
    return {"theta": j.theta, "from": j.from_branch, "to": j.to_branch, "q_from_m": j.q_from, "q_to_m": j.q_to}


def trajectory_summary(traj):
    last = traj.samples[-1]
    return {
        "start_branch": traj.start_branch,
        "final_branch": traj.final_branch,
        "jumps": [jump_record(j) for j in traj.jumps],
        "e_n_final": last.e_n,
        "e_n_final_status": last.e_n_status,
        "direction": traj.direction,
        "delta_fluct": traj.spec.delta_fluct,
        "n_steps": traj.spec.n_steps,
        "jump_threshold_m": traj.jump_threshold,
        "admissibility": traj.admissibility,
    }
