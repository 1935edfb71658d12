"""On-disk formats: dataset container, checkpoints, metrics CSV."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .nets import SeqNet
from .tasks import Split, TaskDataset

DATASET_MAGIC = b"DRNN-DATASET 1\n"
CHECKPOINT_FORMAT = "drnn-checkpoint"
METRIC_COLUMNS = ("run_id", "epoch", "split", "loss", "metric_name", "metric_value",
                  "wall_ms", "seed")
SPLIT_FIELDS = ("inputs", "labels", "mask")


# ---------------------------------------------------------------- datasets

def dumps_dataset(ds: TaskDataset) -> bytes:
    """Magic line, one JSON header line, then ``.npy`` records in header order.

    The ``.npy`` records carry no timestamps, so equal datasets give equal bytes.
    """
    names = list(ds.splits)
    header = {
        "name": ds.name, "input_dim": ds.input_dim, "output_dim": ds.output_dim,
        "loss_kind": ds.loss_kind, "metric": ds.metric, "meta": ds.meta,
        "splits": names, "fields": list(SPLIT_FIELDS),
    }
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(json.dumps(header, sort_keys=True).encode() + b"\n")
    for name in names:
        split = ds.splits[name]
        for fld in SPLIT_FIELDS:
            np.lib.format.write_array(buf, np.ascontiguousarray(getattr(split, fld)),
                                      allow_pickle=False)
    return buf.getvalue()


def loads_dataset(data: bytes) -> TaskDataset:
    if not data.startswith(DATASET_MAGIC):
        raise ValueError("not a dataset file")
    buf = io.BytesIO(data)
    buf.readline()
    header = json.loads(buf.readline())
    splits = {}
    for name in header["splits"]:
        arrays = {fld: np.lib.format.read_array(buf, allow_pickle=False)
                  for fld in header["fields"]}
        splits[name] = Split(**arrays)
    return TaskDataset(header["name"], header["input_dim"], header["output_dim"],
                       header["loss_kind"], header["metric"], splits, header["meta"])


def save_dataset(ds: TaskDataset, path) -> None:
    Path(path).write_bytes(dumps_dataset(ds))


def load_dataset(path) -> TaskDataset:
    return loads_dataset(Path(path).read_bytes())


# ---------------------------------------------------------------- checkpoints

def checkpoint_dict(net: SeqNet, extra: dict | None = None) -> dict:
    """Architecture plus every tensor as nested lists of Python floats.

    ``json`` writes floats with the shortest repr that parses back to the
    same double, so the round trip is exact.
    """
    return {
        "format": CHECKPOINT_FORMAT,
        "version": 1,
        "architecture": net.describe(),
        "extra": extra or {},
        "parameters": {k: {"shape": list(v.shape), "values": v.ravel().tolist()}
                       for k, v in net.parameters().items()},
    }


def save_checkpoint(net: SeqNet, path, extra: dict | None = None) -> None:
    text = json.dumps(checkpoint_dict(net, extra), indent=1, sort_keys=True)
    Path(path).write_text(text + "\n")


def net_from_checkpoint(doc: dict) -> SeqNet:
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not a checkpoint")
    net = SeqNet.from_describe(doc["architecture"])
    arrays = {k: np.asarray(v["values"], dtype=float).reshape(v["shape"])
              for k, v in doc["parameters"].items()}
    net.load(arrays)
    return net


def load_checkpoint(path) -> SeqNet:
    return net_from_checkpoint(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------- metrics

class MetricsWriter:
    """Append-only CSV with one row per (epoch, split)."""

    def __init__(self, path, run_id: str, seed: int):
        self.path = Path(path)
        self.run_id = run_id
        self.seed = seed
        self._fh = open(self.path, "w", newline="")
        self._w = csv.writer(self._fh, lineterminator="\n")
        self._w.writerow(METRIC_COLUMNS)

    def write(self, row: dict) -> None:
        self._w.writerow([self.run_id, row["epoch"], row["split"], repr(float(row["loss"])),
                          row["metric_name"], repr(float(row["metric_value"])),
                          f"{row['wall_ms']:.3f}", self.seed])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
