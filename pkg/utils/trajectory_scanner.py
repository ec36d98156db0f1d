import pandas as pd
import numpy as np
from typing import Dict, List, Any

MASS_TOL = 1e-10
MONOTONE_SLACK = 1e-9


class TrajectoryScanner:
    """Scans a trajectory diagnostics table and reports invariant verdicts"""

    def __init__(self, df: pd.DataFrame):
        self.df = df.copy() if df is not None else pd.DataFrame()
        self.analysis_results = {}
        self.insights = []

    def scan_overview(self) -> Dict[str, Any]:
        """Overview of the run: sample count, horizon, final diagnostics"""
        if self.df.empty:
            return {"error": "No trajectory samples to analyze"}

        first, last = self.df.iloc[0], self.df.iloc[-1]
        overview = {
            "samples": int(len(self.df)),
            "columns": list(self.df.columns),
            "t_final": float(last["t"]),
            "steps": int(last["step"]),
            "mass": float(first["mass"]),
            "mass_drift": float((self.df["mass"] - first["mass"]).abs().max()),
            "F_rho_initial": float(first["F_rho"]),
            "F_rho_final": float(last["F_rho"]),
            "L2_error": float(last["L2_to_steady"]),
            "null_counts": {k: int(v) for k, v in self.df.isnull().sum().items() if v},
        }
        if "W2_sq_cumulative" in self.df:
            overview["W2_sq_total"] = float(last["W2_sq_cumulative"])
        return overview

    def analyze_column(self, column: str) -> Dict[str, Any]:
        """Range and largest increase of one diagnostic column"""
        if column not in self.df.columns:
            return {"error": f"Column '{column}' not found"}

        series = pd.to_numeric(self.df[column], errors='coerce').dropna()
        analysis = {
            "column_name": column,
            "count": int(len(series)),
        }
        if len(series) > 0:
            steps = series.diff().dropna()
            analysis.update({
                "min": float(series.min()),
                "max": float(series.max()),
                "initial": float(series.iloc[0]),
                "final": float(series.iloc[-1]),
                "max_increase": float(steps.max()) if len(steps) else 0.0,
            })
        self.analysis_results[column] = analysis
        return analysis

    def is_nonincreasing(self, column: str, slack: float = MONOTONE_SLACK) -> bool:
        if column not in self.df.columns:
            return True
        steps = pd.to_numeric(self.df[column], errors='coerce').diff().dropna()
        return bool((steps <= slack).all())

    def checks(self) -> Dict[str, bool]:
        """Invariant verdicts readable from the diagnostics table alone"""
        if self.df.empty:
            return {}
        verdicts = {
            "mass_conserved": self.scan_overview()["mass_drift"] <= MASS_TOL * max(1.0, float(self.df["mass"].iloc[0])),
            "energy_nonincreasing": self.is_nonincreasing("F_rho"),
        }
        gq_columns = [c for c in self.df.columns if c.startswith("G_q=")]
        for col in gq_columns:
            verdicts[f"{col}_nonincreasing"] = self.is_nonincreasing(col)
        return verdicts

    def generate_insights(self) -> List[str]:
        """Human-readable verdicts for the run summary"""
        insights = []
        overview = self.scan_overview()
        if "error" in overview:
            return [overview["error"]]

        for name, passed in self.checks().items():
            insights.append(f"{'PASS' if passed else 'FAIL'} {name}")

        energy = self.analyze_column("F_rho")
        if energy.get("max_increase", 0.0) > MONOTONE_SLACK:
            insights.append(f"F_rho increased by {energy['max_increase']:.3e} in one sample")

        if overview["L2_error"] <= 1e-10:
            insights.append("Run ended at the steady state (L2 error <= 1e-10)")

        bv = self.analyze_column("BV_m")
        if bv.get("count", 0) > 1 and bv["initial"] > 0:
            insights.append(f"Weighted BV norm went from {bv['initial']:.3e} to {bv['final']:.3e}")

        self.insights = insights
        return insights
