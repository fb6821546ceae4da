"""Summaries and charts over the CSV files written by training and evaluation."""

import logging
from pathlib import Path
from typing import Dict, List, Optional, Union

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from tabulate import tabulate

PathLike = Union[str, Path]

METHOD_COLORS = {"4d": "#1f77b4", "per_frame": "#ff7f0e"}
FALLBACK_COLORS = ["#2ca02c", "#d62728", "#9467bd", "#8c564b"]


def _last(series: pd.Series) -> float:
    values = series.dropna()
    return float(values.iloc[-1]) if len(values) else float("nan")


class RunAnalyzer:
    """Reads stage-1/stage-2 metrics and consistency pair reports of one run."""

    def __init__(self, stage1: Optional[PathLike] = None, stage2: Optional[PathLike] = None,
                 consistency: Optional[PathLike] = None):
        """Load whichever CSV files are given.

        Args:
            stage1: Stage-1 metrics CSV (``<checkpoint>.stage1.csv``)
            stage2: Stage-2 metrics CSV (``<checkpoint>.stage2.csv``)
            consistency: Per-pair CSV written by ``eval-consistency``
        """
        self.logger = logging.getLogger(__name__)
        self.stage1 = self._read(stage1)
        self.stage2 = self._read(stage2)
        self.consistency = self._read(consistency)

    def _read(self, path: Optional[PathLike]) -> Optional[pd.DataFrame]:
        if path is None:
            return None
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Metrics file not found: {path}")
        df = pd.read_csv(path)
        self.logger.info(f"Loaded {len(df)} rows from {path}")
        return df

    def stage1_summary(self) -> Dict:
        """Step count, final losses and last held-out PSNR per phase."""
        df = self.stage1
        if df is None or df.empty:
            return {"steps": 0}
        summary = {"steps": int(len(df)), "final_loss": float(df["loss"].iloc[-1])}
        for phase, group in df.groupby("phase", sort=False):
            summary[f"{phase}_steps"] = int(len(group))
            summary[f"{phase}_final_loss"] = float(group["loss"].iloc[-1])
            summary[f"{phase}_psnr_color"] = _last(group["psnr_color"])
            summary[f"{phase}_psnr_feat"] = _last(group["psnr_feat"])
        return summary

    def stage2_summary(self) -> Dict:
        """Final losses and the last covariance-loss validation."""
        df = self.stage2
        if df is None or df.empty:
            return {"steps": 0}
        predicted = _last(df["cov_predicted"])
        identity = _last(df["cov_identity"])
        return {
            "steps": int(len(df)),
            "final_loss": float(df["loss"].iloc[-1]),
            "final_loss_cov": float(df["loss_cov"].iloc[-1]),
            "cov_predicted": predicted,
            "cov_identity": identity,
            "cov_closed_form": _last(df["cov_closed_form"]),
            # below 1 means the predictor beats T = I
            "cov_ratio": predicted / identity if identity and np.isfinite(identity) else float("nan"),
        }

    def _bucket_columns(self) -> List[str]:
        df = self.consistency
        return ["range", "kind"] if df is not None and "kind" in df.columns else ["range"]

    def consistency_table(self) -> pd.DataFrame:
        """Mean RMSE and feature distance per (method, range) and pair kind when recorded."""
        df = self.consistency
        buckets = self._bucket_columns()
        if df is None or df.empty:
            return pd.DataFrame(columns=["method", *buckets, "rmse", "feat_dist", "pairs"])
        grouped = df.groupby(["method", *buckets], sort=False)
        table = grouped.agg(rmse=("rmse", "mean"), feat_dist=("feat_dist", "mean"),
                            pairs=("rmse", "size")).reset_index()
        table["bucket"] = table[buckets].astype(str).apply("/".join, axis=1)
        return table

    def improvement(self, method: str = "4d", baseline: str = "per_frame") -> Dict[str, float]:
        """Relative RMSE reduction of ``method`` over ``baseline`` per bucket.

        Buckets are ranges (``short``), or range and pair kind
        (``short/cross_time``) for reports that record the kind.
        """
        table = self.consistency_table()
        out = {}
        if table.empty:
            return out
        for bucket in dict.fromkeys(table["bucket"]):
            rows = table[table["bucket"] == bucket].set_index("method")["rmse"]
            if method in rows and baseline in rows and rows[baseline] > 0:
                out[bucket] = float(1.0 - rows[method] / rows[baseline])
        return out

    def print_report(self):
        """Print the summaries as grid tables."""
        if self.stage1 is not None:
            print("\nStage 1:")
            print(tabulate(list(self.stage1_summary().items()), headers=["Metric", "Value"], tablefmt="grid"))
        if self.stage2 is not None:
            print("\nStage 2:")
            print(tabulate(list(self.stage2_summary().items()), headers=["Metric", "Value"], tablefmt="grid"))
        if self.consistency is not None:
            table = self.consistency_table().drop(columns="bucket", errors="ignore")
            print("\nConsistency:")
            print(tabulate(table.values.tolist(), headers=list(table.columns), tablefmt="grid", floatfmt=".5f"))
            for bucket, gain in self.improvement().items():
                print(f"{bucket} RMSE reduction of 4d over per_frame: {gain:.1%}")

    def plot_training(self, path: PathLike, window: int = 25) -> Optional[Path]:
        """Loss curves of both stages plus the stage-1 held-out PSNR."""
        if self.stage1 is None and self.stage2 is None:
            return None
        fig = plt.Figure(figsize=(10, 8), dpi=100)

        ax1 = fig.add_subplot(221)
        if self.stage1 is not None and not self.stage1.empty:
            for phase, group in self.stage1.groupby("phase", sort=False):
                ax1.plot(group["step"], group["loss"].rolling(window, min_periods=1).mean(), label=phase)
            ax1.legend()
        ax1.set_title("Stage 1 loss")
        ax1.set_xlabel("Step")
        ax1.set_yscale("log")

        ax2 = fig.add_subplot(222)
        if self.stage1 is not None and "psnr_color" in self.stage1:
            valid = self.stage1.dropna(subset=["psnr_color"])
            ax2.plot(valid["step"], valid["psnr_color"], marker="o", label="C")
            ax2.plot(valid["step"], valid["psnr_feat"], marker="s", label="reversed feature")
            ax2.legend()
        ax2.set_title("Held-out PSNR")
        ax2.set_xlabel("Step")
        ax2.set_ylabel("dB")

        ax3 = fig.add_subplot(223)
        if self.stage2 is not None and not self.stage2.empty:
            for column in ("loss_cov", "loss_content", "loss_style", "loss_pro"):
                ax3.plot(self.stage2["step"], self.stage2[column].rolling(window, min_periods=1).mean(),
                         label=column)
            ax3.legend()
        ax3.set_title("Stage 2 loss terms")
        ax3.set_xlabel("Step")
        ax3.set_yscale("log")

        ax4 = fig.add_subplot(224)
        if self.stage2 is not None and "cov_predicted" in self.stage2:
            valid = self.stage2.dropna(subset=["cov_predicted"])
            for column, label in (("cov_predicted", "predicted"), ("cov_identity", "T = I"),
                                  ("cov_closed_form", "closed form")):
                ax4.plot(valid["step"], valid[column], marker="o", label=label)
            ax4.legend()
        ax4.set_title("Covariance loss (validation)")
        ax4.set_xlabel("Step")
        ax4.set_yscale("symlog", linthresh=1e-8)

        fig.tight_layout(pad=2.0)
        return self._save(fig, path)

    def plot_consistency(self, path: PathLike) -> Optional[Path]:
        """Grouped RMSE bars per range (and pair kind), one bar per method."""
        table = self.consistency_table()
        if table.empty:
            return None
        ranges = list(dict.fromkeys(table["bucket"]))
        methods = list(dict.fromkeys(table["method"]))
        fig = plt.Figure(figsize=(8, 5), dpi=100)
        ax = fig.add_subplot(111)
        bar_width = 0.8 / len(methods)
        positions = np.arange(len(ranges))
        for i, method in enumerate(methods):
            rows = table[table["method"] == method].set_index("bucket")
            heights = [float(rows["rmse"].get(r, np.nan)) for r in ranges]
            color = METHOD_COLORS.get(method, FALLBACK_COLORS[i % len(FALLBACK_COLORS)])
            bars = ax.bar(positions + i * bar_width, heights, width=bar_width, color=color, label=method)
            for bar in bars:
                height = bar.get_height()
                if np.isfinite(height):
                    ax.text(bar.get_x() + bar.get_width() / 2., height, f"{height:.4f}",
                            ha="center", va="bottom", rotation=0)
        ax.set_xticks(positions + bar_width * (len(methods) - 1) / 2)
        ax.set_xticklabels(ranges)
        ax.set_title("Warped RMSE by range")
        ax.set_ylabel("RMSE")
        ax.legend()
        fig.tight_layout(pad=2.0)
        return self._save(fig, path)

    def _save(self, fig, path: PathLike) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path)
        self.logger.info(f"Wrote chart {path}")
        return path
