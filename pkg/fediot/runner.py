"""
Experiment runner for the federated detection pipeline.

This module ties data preparation, federation and evaluation together and
writes the report bundle (metrics CSV, round log, resolved-config echo) of
every run, with timing and a printed summary.
"""

from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

from fediot.config import ExperimentConfig
from fediot.data_pipeline import (
    DeviceDataset,
    device_csv_name,
    dataset_fingerprint,
    load_device_tables,
    prepare_device,
    synth_generate,
    write_csv,
)
from fediot.detection import METRIC_COLUMNS, MetricsReport, evaluate_devices
from fediot.errors import ConfigurationError
from fediot.federation import FederationResult, RoundLog, run_federation, train_local_models
from fediot.numeric import RngStream

logger = logging.getLogger(__name__)

COMPARISON_COLUMNS = ("precision_avg", "tpr_avg", "fpr_avg", "f1_avg", "auc_avg", "time_sec")


@dataclass
class ReportBundle:
    """Files written for one run."""
    out_dir: Path
    metrics_csv: Path
    rounds_log: Path
    config_echo: Path
    family_csv: Path


@dataclass
class RunOutcome:
    """Result of one runner command."""
    report: MetricsReport
    bundle: ReportBundle
    fingerprint: str
    federation: Optional[FederationResult] = None


def metrics_frame(report: MetricsReport) -> pd.DataFrame:
    """Per-device metric rows in the fixed column order plus the ``avg`` row."""
    rows = [{"device": d.device_id, **d.row()} for d in report.devices]
    rows.append({"device": "avg", **report.averages()})
    return pd.DataFrame(rows, columns=["device", *METRIC_COLUMNS])


def family_frame(report: MetricsReport) -> pd.DataFrame:
    rows = [
        {"device": d.device_id, "family": family, "count": count, "detection_rate": rate}
        for d in report.devices
        for family, (count, rate) in d.family_rates.items()
    ]
    return pd.DataFrame(rows, columns=["device", "family", "count", "detection_rate"])


def comparison_row(report: MetricsReport) -> Dict[str, Optional[float]]:
    avg = report.averages()
    return {
        "precision_avg": avg["precision"],
        "tpr_avg": avg["tpr"],
        "fpr_avg": avg["fpr"],
        "f1_avg": avg["f1"],
        "auc_avg": avg["auc"],
        "time_sec": report.wall_time_sec,
    }


class ExperimentRunner:
    """
    Runs the simulator's commands for one configuration.

    Features:
    - Data preparation from synthetic devices or CSV files
    - Federated runs with either aggregator, plus the local-only baseline
    - FedAvg / FedAvgM comparison over one or more seeds
    - Report bundles and a run summary
    """

    def __init__(self, config: ExperimentConfig):
        config.validate()
        self.config = config
        self.metrics = {
            "runs": 0,
            "devices_evaluated": 0,
            "federation_seconds": 0.0,
            "files_written": 0,
        }

    @property
    def out_dir(self) -> Path:
        return Path(self.config.out_dir)

    def _ensure_dir(self, path: Path) -> Path:
        path.mkdir(parents=True, exist_ok=True)
        return path

    def prepare_datasets(self, config: Optional[ExperimentConfig] = None) -> List[DeviceDataset]:
        """
        Build one DeviceDataset per client.

        Raises:
            ConfigurationError: If the number of devices does not match num_clients
        """
        config = config or self.config
        if config.data_source == "synth":
            tables = [(device_csv_name(d)[:-4], t) for d, t in enumerate(synth_generate(config.synth))]
        else:
            tables = load_device_tables(config.path_pattern)
        if len(tables) != config.federated.num_clients:
            raise ConfigurationError(
                f"Found {len(tables)} devices, config expects num_clients={config.federated.num_clients}"
            )
        root = RngStream(config.seed)
        return [
            prepare_device(raw, device_id, root.derive("split", client=i),
                           config.anomaly_mix_ratio, config.drop_id_column)
            for i, (device_id, raw) in enumerate(tables)
        ]

    def synth(self) -> List[Path]:
        """Write the synthetic devices as CSV files into the output directory."""
        if self.config.data_source != "synth":
            raise ConfigurationError("The synth command needs data.source 'synth'")
        out = self._ensure_dir(self.out_dir)
        paths = [write_csv(table, out / device_csv_name(d))
                 for d, table in enumerate(synth_generate(self.config.synth))]
        self._write_config_echo(out, self.config, command="synth")
        self.metrics["files_written"] += len(paths) + 1
        logger.info(f"Wrote {len(paths)} synthetic device files to {out}")
        return paths

    def run(self, config: Optional[ExperimentConfig] = None, out_dir: Optional[Path] = None,
            datasets: Optional[Sequence[DeviceDataset]] = None) -> RunOutcome:
        """Full pipeline: prepare data, federate, evaluate, write the bundle."""
        config = config or self.config
        out = self._ensure_dir(Path(out_dir) if out_dir else self.out_dir)
        datasets = list(datasets) if datasets is not None else self.prepare_datasets(config)
        arch = config.architecture(datasets[0].feature_dim)

        logger.info(f"Running federation: aggregator={config.federated.aggregator} seed={config.seed}")
        result = run_federation(config.federated, datasets, arch)
        report = evaluate_devices([result.params] * len(datasets), datasets,
                                  arch.hidden_activation, result.wall_time_sec)
        fingerprint = dataset_fingerprint(datasets)
        bundle = self._write_bundle(out, config, report, result.rounds, fingerprint, command="run")

        self.metrics["runs"] += 1
        self.metrics["devices_evaluated"] += len(report.devices)
        self.metrics["federation_seconds"] += result.wall_time_sec
        return RunOutcome(report, bundle, fingerprint, result)

    def local(self) -> RunOutcome:
        """Local-detection baseline: every device uses only its own model."""
        out = self._ensure_dir(self.out_dir)
        datasets = self.prepare_datasets()
        arch = self.config.architecture(datasets[0].feature_dim)
        models = train_local_models(self.config.federated, datasets, arch)
        report = evaluate_devices(models, datasets, arch.hidden_activation)
        fingerprint = dataset_fingerprint(datasets)
        bundle = self._write_bundle(out, self.config, report, [], fingerprint, command="local")
        self.metrics["runs"] += 1
        self.metrics["devices_evaluated"] += len(report.devices)
        return RunOutcome(report, bundle, fingerprint)

    def compare(self, seeds: Optional[Sequence[int]] = None) -> pd.DataFrame:
        """
        Run FedAvg then FedAvgM on identical data for every seed.

        Returns:
            Per-aggregator table (medians over seeds) with the comparison columns
        """
        seeds = list(seeds) if seeds else [self.config.seed]
        out = self._ensure_dir(self.out_dir)
        runs: List[Dict[str, Any]] = []
        for seed in seeds:
            seeded = self._with_seed(seed)
            datasets = self.prepare_datasets(seeded)
            base = out if len(seeds) == 1 else out / f"seed_{seed}"
            fingerprints = set()
            for aggregator in ("fedavg", "fedavgm"):
                cfg = replace(seeded, federated=replace(seeded.federated, aggregator=aggregator))
                outcome = self.run(cfg, base / aggregator, datasets)
                fingerprints.add(outcome.fingerprint)
                runs.append({"seed": seed, "aggregator": aggregator, **comparison_row(outcome.report)})
            if len(fingerprints) != 1:
                raise ConfigurationError(f"seed {seed}: aggregators saw different datasets")

        runs_frame = pd.DataFrame(runs, columns=["seed", "aggregator", *COMPARISON_COLUMNS])
        runs_frame.to_csv(out / "comparison_runs.csv", index=False, lineterminator="\n")

        table = []
        for aggregator in ("fedavg", "fedavgm"):
            subset = runs_frame[runs_frame["aggregator"] == aggregator]
            row: Dict[str, Any] = {"aggregator": aggregator}
            for col in COMPARISON_COLUMNS:
                values = [v for v in subset[col] if pd.notna(v)]
                row[col] = statistics.median(values) if values else None
            table.append(row)
        comparison = pd.DataFrame(table, columns=["aggregator", *COMPARISON_COLUMNS])
        comparison.to_csv(out / "comparison.csv", index=False, lineterminator="\n")
        self.metrics["files_written"] += 2
        logger.info(f"Comparison over seeds {seeds} written to {out / 'comparison.csv'}")
        return comparison

    def _with_seed(self, seed: int) -> ExperimentConfig:
        return replace(
            self.config,
            federated=replace(self.config.federated, seed=seed),
            synth=replace(self.config.synth, seed=seed),
        )

    def _write_config_echo(self, out: Path, config: ExperimentConfig, command: str,
                           extra: Optional[Dict[str, Any]] = None) -> Path:
        echo = {"command": command, **config.to_flat_dict(), "out_dir": str(out), **(extra or {})}
        path = out / "resolved_config.json"
        with open(path, "w", encoding="utf-8") as f:
            json.dump(echo, f, indent=2, sort_keys=True)
        return path

    def _write_bundle(self, out: Path, config: ExperimentConfig, report: MetricsReport,
                      rounds: Sequence[RoundLog], fingerprint: str, command: str) -> ReportBundle:
        metrics_csv = out / "metrics.csv"
        metrics_frame(report).to_csv(metrics_csv, index=False, lineterminator="\n")

        family_csv = out / "family_metrics.csv"
        family_frame(report).to_csv(family_csv, index=False, lineterminator="\n")

        rounds_log = out / "rounds.jsonl"
        with open(rounds_log, "w", encoding="utf-8") as f:
            for log in rounds:
                f.write(json.dumps(log.to_record()) + "\n")

        thresholds = {d.device_id: d.threshold.tr for d in report.devices}
        config_echo = self._write_config_echo(out, config, command, {
            "dataset_fingerprint": fingerprint,
            "federation_time_sec": report.wall_time_sec,
            "thresholds": thresholds,
        })
        self.metrics["files_written"] += 4
        logger.info(f"Report bundle written to {out}")
        return ReportBundle(out, metrics_csv, rounds_log, config_echo, family_csv)

    def print_summary(self, report: Optional[MetricsReport] = None, title: str = "RUN SUMMARY") -> None:
        """Log and print a compact summary; the metric lines need an evaluated ``report``."""
        lines = []
        if report is not None:
            avg = report.averages()
            auc = f"{avg['auc']:.4f}" if avg["auc"] is not None else "n/a"
            lines += [
                f"Devices evaluated: {len(report.devices)}",
                f"🎯 F1 avg: {avg['f1']:.4f}",
                f"🚨 FPR avg: {avg['fpr']:.4f}",
                f"📈 AUC avg: {auc}",
                f"⏱️ Federation time: {report.wall_time_sec:.2f}s",
            ]
        else:
            lines.append(f"Runs: {self.metrics['runs']}")
        lines.append(f"📁 Files written: {self.metrics['files_written']}")

        print(f"\n{'=' * 60}")
        print(f"📊 {title}")
        print(f"{'=' * 60}")
        for line in lines:
            print(line)
        logger.info(f"{title}: " + "; ".join(lines))

    def get_performance_metrics(self) -> Dict[str, Any]:
        return dict(self.metrics)
