"""
Trajectory container shared by the JKO and PDE drivers, plus the CSV/JSON
writers used by the command line.
"""

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from utils.measures import (Density, Exponents, Weight, functional_F, functional_Gq, l2_distance,
                            steady_state, to_u, u_power_gradient_energy, weighted_BV_norm)

logger = logging.getLogger(__name__)

FLOAT_FORMAT = '%.17g'


def gq_column(q: float) -> str:
    return f"G_q={q:g}"


@dataclass
class Trajectory:
    """Recorded samples of a run: times, densities and one diagnostics row per sample"""
    times: List[float]
    densities: List[Density]
    frame: pd.DataFrame
    failure: Optional[str] = None

    @property
    def final(self) -> Density:
        return self.densities[-1]

    @property
    def completed(self) -> bool:
        return self.failure is None

    def __len__(self) -> int:
        return len(self.times)


@dataclass
class TrajectoryRecorder:
    w: Weight
    exps: Exponents
    q_list: Sequence[float] = ()
    stride: int = 1
    _times: List[float] = field(default_factory=list)
    _densities: List[Density] = field(default_factory=list)
    _rows: List[Dict[str, Any]] = field(default_factory=list)
    _w2_sq_total: float = 0.0
    _failure: Optional[str] = None
    _steady: Optional[Density] = None

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be at least 1, got {self.stride}")

    def record(self, step: int, t: float, f: Density, w2_step: Optional[float] = None,
               force: bool = False, energy: Optional[float] = None) -> None:
        """energy replaces F_rho[f] when the solver tracks a finer energy than the binned density"""
        if w2_step is not None:
            self._w2_sq_total += w2_step ** 2
        if step % self.stride != 0 and not force:
            return
        if self._steady is None:
            self._steady = steady_state(self.w, f.mass, self.w.grid)
        self._times.append(float(t))
        self._densities.append(f)
        self._rows.append(diagnostics_row(step, t, f, self.w, self.exps, self.q_list,
                                          w2_step, self._w2_sq_total, self._steady, energy=energy))

    def fail(self, exc: Exception) -> None:
        self._failure = f"{type(exc).__name__}: {exc}"

    def finish(self) -> Trajectory:
        return Trajectory(times=self._times, densities=self._densities,
                          frame=pd.DataFrame(self._rows), failure=self._failure)


def diagnostics_row(step: int, t: float, f: Density, w: Weight, exps: Exponents, q_list: Sequence[float],
                    w2_step: Optional[float], w2_sq_total: float, steady: Density,
                    energy: Optional[float] = None) -> Dict[str, Any]:
    grid = w.grid
    u = to_u(f, w)
    row = {
        'step': int(step),
        't': float(t),
        'mass': f.mass,
        'F_rho': functional_F(w, f, exps) if energy is None else float(energy),
        'W2_step': np.nan if w2_step is None else float(w2_step),
        'W2_sq_cumulative': w2_sq_total,
        'BV_m': weighted_BV_norm(u, w, grid),
        'min_u': float(u.min()),
        'max_u': float(u.max()),
        'min_f': float(f.f.min()),
        'max_f': float(f.f.max()),
        'L2_to_steady': l2_distance(f, steady, grid),
    }
    positive = f.is_positive
    row['H1_u'] = u_power_gradient_energy(u, w, grid, 1.0)
    row['H1_u_neg_r'] = u_power_gradient_energy(u, w, grid, -exps.r) if positive else np.inf
    for q in q_list:
        row[gq_column(q)] = functional_Gq(q, w, f)
    return row


def density_frame(f: Density, w: Weight) -> pd.DataFrame:
    """One row per cell: center, rho, m, f, u"""
    return pd.DataFrame({
        'center': w.grid.centers,
        'rho': w.rho,
        'm': w.m,
        'f': f.f,
        'u': to_u(f, w),
    })


def _atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(frame: pd.DataFrame, path) -> None:
    _atomic_write(Path(path), frame.to_csv(index=False, float_format=FLOAT_FORMAT))


def write_json(payload: Dict[str, Any], path) -> None:
    _atomic_write(Path(path), json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + '\n')


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def write_trajectory(traj: Trajectory, w: Weight, out_dir, snapshots: bool = True) -> List[Path]:
    """trajectory.csv plus density_<step>.csv for every recorded sample"""
    out_dir = Path(out_dir)
    written = [out_dir / 'trajectory.csv']
    write_csv(traj.frame, written[0])
    if snapshots:
        for step, f in zip(traj.frame['step'], traj.densities):
            path = out_dir / f"density_{int(step)}.csv"
            write_csv(density_frame(f, w), path)
            written.append(path)
    logger.info("wrote %d files to %s", len(written), out_dir)
    return written
