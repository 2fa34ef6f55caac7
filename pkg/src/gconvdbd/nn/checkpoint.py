"""Self-contained JSON checkpoint: config, graph, normaliser and every weight."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset import NormalizationStats
from ..graph import SensorGraph
from .cell import GConvLSTMParams
from .model import GConvLSTMClassifier, ModelConfig

FORMAT = "gconvdbd-checkpoint/1"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: GConvLSTMClassifier
    graph: SensorGraph
    stats: NormalizationStats
    subset: str = "custom"
    meta: dict = field(default_factory=dict)

    @property
    def channels(self) -> tuple[str, ...]:
        return self.graph.node_names

    @property
    def config(self) -> ModelConfig:
        return self.model.config


def _encode(arr: np.ndarray) -> dict:
    return {"shape": list(arr.shape), "data": arr.ravel().tolist()}


def _decode(rec: dict) -> np.ndarray:
    return np.asarray(rec["data"], dtype=float).reshape(rec["shape"])


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    if tuple(ckpt.stats.channels) != ckpt.graph.node_names:
        raise CheckpointError("normaliser channels differ from graph nodes")
    doc = {
        "format": FORMAT,
        "subset": ckpt.subset,
        "config": ckpt.model.config.to_dict(),
        "n_nodes": ckpt.model.n_nodes,
        "d_x": ckpt.model.d_x,
        "graph": ckpt.graph.to_dict(),
        "graph_hash": ckpt.graph.digest(),
        "normalizer": ckpt.stats.to_dict(),
        "weights": {k: _encode(v) for k, v in ckpt.model.parameters().items()},
        "meta": ckpt.meta,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    if doc.get("format") != FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format')!r}")
    try:
        config = ModelConfig.from_dict(doc["config"])
        graph = SensorGraph.from_dict(doc["graph"])
        if graph.digest() != doc["graph_hash"]:
            raise CheckpointError("graph hash mismatch")
        stats = NormalizationStats.from_dict(doc["normalizer"])
        w = {k: _decode(v) for k, v in doc["weights"].items()}
        layers = [
            GConvLSTMParams(
                w[f"layer{k}.W_x"], w[f"layer{k}.W_h"], w[f"layer{k}.w_peep"], w[f"layer{k}.b"]
            )
            for k in range(len(config.hidden_sizes))
        ]
        model = GConvLSTMClassifier(int(doc["n_nodes"]), config, layers, w["out.w"], w["out.b"])
    except CheckpointError:
        raise
    except KeyError as exc:
        raise CheckpointError(f"checkpoint lacks {exc.args[0]!r}") from None
    except (ValueError, TypeError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from None
    if model.n_nodes != graph.n:
        raise CheckpointError("model and graph disagree on node count")
    return Checkpoint(model, graph, stats, doc.get("subset", "custom"), doc.get("meta", {}))
