"""Experiment harness: instance generation, sweeps, scans, output, CLI."""

from attnflow.harness.instances import random_instance
from attnflow.harness.census import CensusRecord, ExperimentSpec, run_census
from attnflow.harness.scan import ScanRow, scan_bipartite

__all__ = ["CensusRecord", "ExperimentSpec", "ScanRow", "random_instance", "run_census", "scan_bipartite"]
