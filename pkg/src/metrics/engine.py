import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tabulate import tabulate

from src.formats.flow_io import write_flow
from src.metrics.consistency import consistency_rmse, feat_dist
from src.nets.encoder import FrozenEncoder
from src.scene.flow import FlowField, flow_oracle, view
from src.scene.generator import SceneBundle
from src.stylize.base import Stylizer
from src.train.config import EvalConfig
from src.utils.errors import InvalidInputError

RANGES = ("short", "long")
KINDS = ("cross_time", "cross_camera")


def pair_kind(pair: Tuple[int, int, int, int]) -> str:
    """``cross_camera`` when both views share a timestamp, else ``cross_time``."""
    return "cross_camera" if pair[1] == pair[3] else "cross_time"


def _plain(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


class ConsistencyReport:
    """Container for the consistency of one stylized view pair."""

    def __init__(self, method: str, style: str, range_name: str, camera_a: int, t_index_a: int,
                 camera_b: int, t_index_b: int, t_a: float, t_b: float):
        self.method = method
        self.style = style
        self.range = range_name
        self.camera_a = camera_a
        self.t_index_a = t_index_a
        self.camera_b = camera_b
        self.t_index_b = t_index_b
        self.t_a = t_a
        self.t_b = t_b
        self.kind = pair_kind((camera_a, t_index_a, camera_b, t_index_b))
        self.rmse = 0.0
        self.feat_dist = 0.0
        self.valid_fraction = 0.0

    def record(self, rmse: float, feat_distance: float, valid_fraction: float):
        """Store the pair's metrics."""
        self.rmse = rmse
        self.feat_dist = feat_distance
        self.valid_fraction = valid_fraction

    def __str__(self):
        return (f"{self.method} [{self.range}/{self.kind}] cam {self.camera_a}@{self.t_a:.3f} -> cam {self.camera_b}@{self.t_b:.3f} "
                f"| RMSE {self.rmse:.5f} | feat {self.feat_dist:.5f} | valid {self.valid_fraction:.1%}")

    def to_dict(self) -> Dict:
        """Convert report to dictionary for results."""
        return {
            "method": self.method,
            "style": self.style,
            "range": self.range,
            "kind": self.kind,
            "camera_a": self.camera_a,
            "t_index_a": self.t_index_a,
            "t_a": self.t_a,
            "camera_b": self.camera_b,
            "t_index_b": self.t_index_b,
            "t_b": self.t_b,
            "rmse": self.rmse,
            "feat_dist": self.feat_dist,
            "valid_fraction": self.valid_fraction,
        }


class ConsistencyEngine:
    """Engine for the short- and long-range consistency protocol.

    A cross-time pair joins view (i, t_j) with view (i + offset, t_{j+1}); a
    cross-camera pair joins (i, t_j) with (i + offset, t_j). The short range
    uses neighbouring cameras, the long range spans four adjacent cameras.
    Both kinds are reported separately, and every stylizer is scored on the
    identical pairs and flows.
    """

    def __init__(self, bundle: SceneBundle, stylizers: Sequence[Stylizer], config: Optional[EvalConfig] = None):
        """Initialize the consistency engine.

        Args:
            bundle: Scene supplying cameras, timestamps and the flow oracle
            stylizers: Pipelines to compare (e.g. 4D and per-frame)
            config: Pair offsets; defaults to short 1, long 3
        """
        self.bundle = bundle
        self.stylizers = list(stylizers)
        self.config = config or EvalConfig()
        self.encoder = FrozenEncoder()
        self.flows: Dict[Tuple[int, int, int, int], FlowField] = {}
        self.logger = logging.getLogger(__name__)

    def pairs(self, range_name: str, kind: Optional[str] = None) -> List[Tuple[int, int, int, int]]:
        """(camera_a, t_index_a, camera_b, t_index_b) for one range.

        Cross-time pairs come first, then cross-camera pairs; ``kind`` keeps
        only one of them.
        """
        if range_name not in RANGES:
            raise InvalidInputError(f"Unknown range '{range_name}', expected one of {RANGES}")
        if kind is not None and kind not in KINDS:
            raise InvalidInputError(f"Unknown pair kind '{kind}', expected one of {KINDS}")
        offset = self.config.short_offset if range_name == "short" else self.config.long_offset
        n_cams = len(self.bundle.cameras)
        n_times = len(self.bundle.timestamps)
        cameras = range(n_cams - offset)
        cross_time = [(ci, tj, ci + offset, tj + 1) for ci in cameras for tj in range(n_times - 1)]
        cross_camera = [(ci, tj, ci + offset, tj) for ci in cameras for tj in range(n_times)]
        if kind == "cross_time":
            return cross_time
        if kind == "cross_camera":
            return cross_camera
        return cross_time + cross_camera

    def _flow(self, pair: Tuple[int, int, int, int]):
        ca, ta, cb, tb = pair
        ts = self.bundle.timestamps
        # b's grid, pointing into a
        return flow_oracle(self.bundle, view(self.bundle, cb, ts[tb]), view(self.bundle, ca, ts[ta]))

    def evaluate(self, styles: Dict[str, np.ndarray], ranges: Sequence[str] = RANGES) -> List[ConsistencyReport]:
        """Score every stylizer on every style and pair.

        Args:
            styles: Style name to preprocessed style image

        Returns:
            One report per (stylizer, style, range, pair)
        """
        pair_sets = {r: self.pairs(r) for r in ranges}
        if not any(pair_sets.values()):
            raise InvalidInputError(
                f"No view pairs: {len(self.bundle.cameras)} cameras, {len(self.bundle.timestamps)} timestamps"
            )
        flows = {pair: self._flow(pair) for pairs in pair_sets.values() for pair in pairs}
        self.flows.update(flows)
        ts = self.bundle.timestamps
        reports: List[ConsistencyReport] = []
        for stylizer in self.stylizers:
            for style_name, image in styles.items():
                stylizer.set_style(image)
                frames: Dict[Tuple[int, int], np.ndarray] = {}

                def frame(ci: int, ti: int) -> np.ndarray:
                    if (ci, ti) not in frames:
                        frames[(ci, ti)] = stylizer.stylize(ci, float(ts[ti])).output
                    return frames[(ci, ti)]

                for range_name, pairs in pair_sets.items():
                    for pair in pairs:
                        ca, ta, cb, tb = pair
                        flow = flows[pair]
                        report = ConsistencyReport(stylizer.name, style_name, range_name, ca, ta, cb, tb,
                                                   float(ts[ta]), float(ts[tb]))
                        report.record(
                            consistency_rmse(frame(ca, ta), frame(cb, tb), flow),
                            feat_dist(frame(ca, ta), frame(cb, tb), flow, self.encoder),
                            flow.valid_fraction,
                        )
                        self.logger.debug(str(report))
                        reports.append(report)
                self.logger.info(f"Evaluated {stylizer.name} on style '{style_name}' ({len(frames)} frames)")
        return reports

    @staticmethod
    def to_frame(reports: Sequence[ConsistencyReport]) -> pd.DataFrame:
        return pd.DataFrame([r.to_dict() for r in reports])

    @staticmethod
    def summary(reports: Sequence[ConsistencyReport]) -> pd.DataFrame:
        """Mean RMSE, feature distance and pair count per (method, range, kind)."""
        df = ConsistencyEngine.to_frame(reports)
        if df.empty:
            return pd.DataFrame(columns=["method", "range", "kind", "rmse", "feat_dist", "pairs"])
        grouped = df.groupby(["method", "range", "kind"], sort=False)
        out = grouped.agg(rmse=("rmse", "mean"), feat_dist=("feat_dist", "mean"), pairs=("rmse", "size"))
        return out.reset_index()

    def write_csv(self, reports: Sequence[ConsistencyReport], path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame(reports).to_csv(path, index=False, float_format="%.9g")
        self.logger.info(f"Wrote {len(reports)} pair reports to {path}")

    def write_summary(self, reports: Sequence[ConsistencyReport], path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        records = self.summary(reports).to_dict(orient="records")
        payload = {"scene": self.bundle.bundle_id, "pairs": len(reports),
                   "results": [{k: _plain(v) for k, v in row.items()} for row in records]}
        path.write_text(json.dumps(payload, indent=2), encoding="utf-8")
        self.logger.info(f"Wrote consistency summary to {path}")

    def write_flows(self, directory) -> List[Path]:
        """Dump every oracle flow used so far as ``camA_tJJJ-camB_tKKK.g4df``."""
        directory = Path(directory)
        written = []
        for (ca, ta, cb, tb), field in self.flows.items():
            path = directory / f"cam{ca:02d}_t{ta:03d}-cam{cb:02d}_t{tb:03d}.g4df"
            write_flow(path, field)
            written.append(path)
        self.logger.info(f"Wrote {len(written)} flow fields to {directory}")
        return written

    def print_results(self, reports: Sequence[ConsistencyReport]):
        """Print consistency results in a nice format."""
        if not reports:
            print("\nNo view pairs evaluated.")
            return

        summary = self.summary(reports)
        print("\nConsistency Summary:")
        print("-" * 60)
        rows = [[row["method"], row["range"], row["kind"], f"{row['rmse']:.5f}", f"{row['feat_dist']:.5f}",
                 int(row["pairs"])] for _, row in summary.iterrows()]
        headers = ["Method", "Range", "Kind", "Mean RMSE", "Mean feat. dist", "Pairs"]
        print(tabulate(rows, headers=headers, tablefmt="grid"))

        methods = list(dict.fromkeys(summary["method"]))
        if len(methods) >= 2:
            print("\nComparison:")
            print("-" * 40)
            base, other = methods[0], methods[1]
            for range_name, kind in dict.fromkeys(zip(summary["range"], summary["kind"])):
                bucket = (summary["range"] == range_name) & (summary["kind"] == kind)
                a = summary[(summary["method"] == base) & bucket]["rmse"]
                b = summary[(summary["method"] == other) & bucket]["rmse"]
                if len(a) and len(b):
                    verdict = "lower" if a.iloc[0] < b.iloc[0] else "not lower"
                    print(f"{range_name}-range {kind} RMSE: {base} {a.iloc[0]:.5f} "
                          f"vs {other} {b.iloc[0]:.5f} ({verdict})")
