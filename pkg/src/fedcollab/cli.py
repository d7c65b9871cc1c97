"""Command-line experiment harness.

Examples::

    fedcollab train-fedcollab --data-dir data/mnist --workers 10 --epochs 5
    fedcollab train-fedavg --config runs/fedavg.cfg --metrics-path fedavg.csv
    fedcollab generate-private-labels --config runs/pate.cfg --gamma 0.05
    fedcollab eval --metrics-path metrics.csv

Every config key has a matching ``--flag`` (underscores become dashes);
flags override values read from ``--config``. ``$FEDCOLLAB_DATA_DIR``
overrides the data directory.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import PARSERS, ExperimentConfig, parse_config, parse_value, with_overrides
from .data import MnistDataset, limit_dataset, load_split, resolve_data_dir
from .errors import ConfigError, FedCollabError
from .pate import generate_private_labels, write_labels_csv
from .protocols import EpochMetrics, Mode, TrainingResult, run_training

logger = logging.getLogger("fedcollab")

METRICS_HEADER = ["epoch", "worker_id", "loss", "accuracy", "agg_loss", "ensemble_accuracy", "bytes_per_link"]
ENSEMBLE_ID = "ensemble"

SUBCOMMANDS = {
    "train-fedavg": "fedavg",
    "train-fedcollab": "fedcollab",
    "generate-private-labels": "pate-labels",
}


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def write_metrics_csv(timeline: Sequence[EpochMetrics], path: str | Path) -> None:
    """One row per (epoch, worker) followed by one ``ensemble`` row per epoch.

    The ensemble row carries the aggregate loss in ``loss`` and the
    plurality-vote accuracy in ``accuracy``.
    """
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for m in timeline:
            shared = [_fmt(m.agg_loss), _fmt(m.ensemble_accuracy), m.bytes_per_link]
            for k, (loss, acc) in enumerate(zip(m.losses, m.accuracies)):
                w.writerow([m.epoch, k, _fmt(loss), _fmt(acc), *shared])
            w.writerow([m.epoch, ENSEMBLE_ID, _fmt(m.agg_loss), _fmt(m.ensemble_accuracy), *shared])


def read_metrics_csv(path: str | Path) -> dict[int, dict]:
    """Group a metrics file by epoch: ``{epoch: {"workers": [...], "ensemble": acc, ...}}``."""
    epochs: dict[int, dict] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_HEADER:
            raise ConfigError(f"{path} is not a metrics file (header {reader.fieldnames})")
        for row in reader:
            e = epochs.setdefault(int(row["epoch"]), {"workers": []})
            if row["worker_id"] == ENSEMBLE_ID:
                e["ensemble"] = float(row["accuracy"])
                e["agg_loss"] = float(row["agg_loss"])
                e["bytes_per_link"] = int(row["bytes_per_link"])
            else:
                e["workers"].append(float(row["accuracy"]))
    return epochs


def summarize_metrics(path: str | Path, out=sys.stdout) -> None:
    print("epoch  mean_acc  min_acc  max_acc  ensemble  ens>=mean-0.5pp  ens>=all", file=out)
    for epoch, e in sorted(read_metrics_csv(path).items()):
        accs = np.array(e["workers"])
        ens = e["ensemble"]
        print(
            f"{epoch:5d}  {accs.mean():8.4f}  {accs.min():7.4f}  {accs.max():7.4f}  {ens:8.4f}"
            f"  {str(ens >= accs.mean() - 0.005):>15}  {str(bool(np.all(ens >= accs))):>8}",
            file=out,
        )


def load_data(config: ExperimentConfig) -> tuple[MnistDataset, MnistDataset]:
    data_dir = resolve_data_dir(config.data_dir)
    train = limit_dataset(load_split(data_dir, "train"), config.train_limit, config.seed)
    test = limit_dataset(load_split(data_dir, "test"), config.test_limit, config.seed)
    return train, test


def _train(config: ExperimentConfig, mode: Mode, train, test) -> TrainingResult:
    result = run_training(mode, config.federated(), train, test)
    write_metrics_csv(result.timeline, config.metrics_path)
    if config.message_log_path:
        result.log.dump_jsonl(config.message_log_path)
    final = result.timeline[-1]
    logger.info(
        "%s: %d workers, final mean accuracy %.4f, ensemble %.4f, %d bytes per link per round",
        mode.value,
        config.workers,
        float(np.mean(final.accuracies)),
        final.ensemble_accuracy,
        final.bytes_per_link,
    )
    return result


def run_experiment(config: ExperimentConfig) -> int:
    """Run one experiment end to end; returns a process exit status."""
    try:
        train, test = load_data(config)
        if config.mode in ("fedavg", "fedcollab"):
            _train(config, Mode(config.mode), train, test)
            return 0

        result = _train(config, Mode.FEDCOLLAB, train, test)
        public = limit_dataset(test, config.public_limit, config.seed)
        examples, ledger = generate_private_labels(result.models, public.images, config.gamma, config.seed)
        # ground truth is only used to report label quality, never to pick labels
        labels = np.array([ex.label for ex in examples], dtype=np.int64)
        agreement = float(np.mean(labels == public.labels)) if len(examples) else math.nan
        write_labels_csv(config.labels_path, examples, ledger)
        ledger_record = {
            "queries": ledger.queries,
            "gamma": ledger.gamma,
            "epsilon_total": ledger.epsilon_total,
            "delta": ledger.delta,
            "accounted": ledger.accounted,
            "label_accuracy": agreement,
        }
        with open(config.labels_path + ".ledger", "w") as fh:
            fh.write(json.dumps(ledger_record) + "\n")
        logger.info("labelled %d inputs, epsilon %s, accuracy %.4f", ledger.queries, ledger.epsilon_total, agreement)
        return 0
    except (FedCollabError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcollab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--log-level", default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*SUBCOMMANDS, "eval"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="flat key = value config file")
        for key in PARSERS:
            if key != "mode":
                p.add_argument("--" + key.replace("_", "-"), dest=key, metavar=key.upper())
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        config = parse_config(args.config.read_text()) if args.config else ExperimentConfig()
        overrides = {
            key: parse_value(key, getattr(args, key), "--" + key.replace("_", "-"))
            for key in PARSERS
            if getattr(args, key, None) is not None
        }
        config = with_overrides(config, overrides)
    except (ConfigError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.command == "eval":
        try:
            summarize_metrics(config.metrics_path)
        except (ConfigError, OSError, KeyError, ValueError) as e:
            print(f"error: {e}", file=sys.stderr)
            return 1
        return 0
    return run_experiment(with_overrides(config, {"mode": SUBCOMMANDS[args.command]}))


if __name__ == "__main__":
    sys.exit(main())
