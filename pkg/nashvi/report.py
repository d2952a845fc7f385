"""
Run artifacts: the per-iterate CSV and its YAML metadata sidecar.

CSV header (fixed):
    k, theta columns, gap_agent_1..N, sup_gap, eps_weighted, eps_agentwise

Theta columns are ``theta_<agent>_s<state>`` for two_action_box and
``theta_<agent>_s<state>_a<action>`` otherwise, agents 1-based. Floats are
written in shortest round-trip form so identical runs give identical bytes.
"""

import csv
import platform
from pathlib import Path

import numpy as np
import scipy
import yaml

from nashvi import __version__
from nashvi.config import RunConfig
from nashvi.metrics import GapReport
from nashvi.policy import ParamSpace
from nashvi.solver import RunRecord
from nashvi.util import format_float


def theta_columns(space: ParamSpace) -> list[str]:
    names = []
    for i in range(space.n_agents):
        for s in range(space.n_states):
            if space.is_box:
                names.append(f"theta_{i + 1}_s{s}")
            else:
                names.extend(f"theta_{i + 1}_s{s}_a{a}" for a in range(space.n_actions[i]))
    return names


def csv_header(space: ParamSpace) -> list[str]:
    gaps = [f"gap_agent_{i + 1}" for i in range(space.n_agents)]
    return ["k"] + theta_columns(space) + gaps + ["sup_gap", "eps_weighted", "eps_agentwise"]


def write_run_csv(path: Path, space: ParamSpace, record: RunRecord, gaps: GapReport) -> int:
    """One row per outer index k = 1..K holding theta_k and its gaps. Returns the row count."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(csv_header(space))
        for k in range(1, gaps.K + 1):
            row = [k]
            row.extend(format_float(x) for x in record.thetas[k - 1])
            row.extend(format_float(x) for x in gaps.gaps[k - 1])
            row.extend([
                format_float(gaps.sup_gap[k - 1]),
                format_float(gaps.eps[k - 1]),
                format_float(gaps.eps_agentwise[k - 1]),
            ])
            writer.writerow(row)
    return gaps.K


def meta_path(out: Path) -> Path:
    """Sidecar next to the CSV: run.csv -> run.csv.meta.yaml."""
    out = Path(out)
    return out.with_name(out.name + ".meta.yaml")


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def build_metadata(config: RunConfig, record: RunRecord, gaps: GapReport) -> dict:
    return _plain({
        "game": str(config.game_path),
        "algorithm": config.algorithm,
        "settings": config.settings,
        "policy": {"kind": config.space.kind.value, "alpha": config.space.alpha},
        "solver": config.solver.as_dict(),
        "seed": record.seed,
        "tau": record.tau,
        "gamma0": record.gamma0,
        "evaluations": record.evaluations,
        "inner_capped": record.capped,
        "final_theta": record.thetas[-1],
        "final_eps_weighted": float(gaps.eps[-1]),
        "final_eps_agentwise": float(gaps.eps_agentwise[-1]),
        "wall_clock_seconds": round(record.wall_clock, 3),
        "versions": {
            "nashvi": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    })


def write_metadata(path: Path, metadata: dict) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(metadata, f, default_flow_style=False, sort_keys=False)
