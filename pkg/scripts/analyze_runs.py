#!/usr/bin/env python3
"""
Run Metrics Analyzer

Summarizes the metrics CSVs of a training run (stage 1 and stage 2) and the
per-pair consistency CSV of an evaluation, and writes matplotlib charts.

    python scripts/analyze_runs.py --stage1 runs/model.g4ds.stage1.csv \
        --stage2 runs/model.g4ds.stage2.csv --consistency runs/eval/pairs.csv --out-dir runs/charts
"""

import argparse
import logging
import sys
from pathlib import Path

from dotenv import load_dotenv

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.analysis.run_report import RunAnalyzer  # noqa: E402
from src.utils.logging import setup_logging  # noqa: E402

logger = logging.getLogger(__name__)


def parse_args():
    parser = argparse.ArgumentParser(description="Summarize training and consistency metrics")
    parser.add_argument("--stage1", help="Stage-1 metrics CSV")
    parser.add_argument("--stage2", help="Stage-2 metrics CSV")
    parser.add_argument("--consistency", help="Per-pair consistency CSV")
    parser.add_argument("--out-dir", default="charts", help="Directory for the PNG charts")
    parser.add_argument("--window", type=int, default=25, help="Rolling window for loss curves")
    return parser.parse_args()


def main():
    load_dotenv()
    setup_logging()
    args = parse_args()
    if not (args.stage1 or args.stage2 or args.consistency):
        logger.error("Nothing to analyze: pass --stage1, --stage2 and/or --consistency")
        return 1
    try:
        analyzer = RunAnalyzer(args.stage1, args.stage2, args.consistency)
        analyzer.print_report()
        out_dir = Path(args.out_dir)
        analyzer.plot_training(out_dir / "training.png", window=args.window)
        analyzer.plot_consistency(out_dir / "consistency.png")
    except Exception as e:
        logger.error(f"Error in main: {str(e)}")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
