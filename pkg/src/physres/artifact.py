"""Versioned JSON model artifact with a content checksum.

Floats are written with ``repr`` precision by the json module, so a saved
model loads back bit-identical. The checksum is the sha256 of the canonical
(sorted-key, compact) encoding of every field except the checksum itself.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .explain import ShapleyReport
from .features import GlobalStats
from .pipeline import Model
from .priors import WeightPrior
from .readout import ReadoutPrior, VariationalPosterior
from .reservoir import ReservoirConfig, ReservoirWeights

FORMAT_VERSION = 1


class ArtifactError(ValueError):
    pass


def canonical_json(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), allow_nan=False)


def checksum(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "checksum"}
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def model_to_dict(model: Model, seed: int, config: Optional[dict] = None, extra: Optional[dict] = None) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "seed": int(seed),
        "config": config or {},
        "classes": list(model.classes),
        "feature_names": list(model.feature_names),
        "global_stats": model.global_stats.to_dict(),
        "prior": model.prior.to_dict(),
        "reservoir": {
            "config": model.reservoir_config.to_dict(),
            "W_in": model.reservoir.W_in.tolist(),
            "W": model.reservoir.W.tolist(),
            "t_drive": model.t_drive,
        },
        "node_to_feature": list(model.reservoir_config.node_to_feature),
        "readout_prior": model.readout_prior.to_dict(),
        "initial_posterior": model.initial_posterior.to_dict(),
        "posterior": model.posterior.to_dict(),
        "loss_trace": [float(v) for v in model.loss_trace],
        "shapley": None if model.shapley is None else model.shapley.to_dict(),
        "extra": extra or {},
    }
    doc["checksum"] = checksum(doc)
    return doc


def model_from_dict(doc: dict, verify: bool = True) -> Model:
    if not isinstance(doc, dict):
        raise ArtifactError("artifact must be a JSON object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ArtifactError(f"unsupported artifact format_version {version!r} (expected {FORMAT_VERSION})")
    if verify:
        stored = doc.get("checksum")
        if stored is None:
            raise ArtifactError("artifact has no checksum")
        if checksum(doc) != stored:
            raise ArtifactError("artifact checksum mismatch; refusing to load a modified or corrupted file")
    try:
        res = doc["reservoir"]
        rcfg = ReservoirConfig.from_dict(res["config"])
        if list(rcfg.node_to_feature) != list(doc["node_to_feature"]):
            raise ArtifactError("node_to_feature disagrees with the reservoir config")
        return Model(
            classes=tuple(int(c) for c in doc["classes"]),
            global_stats=GlobalStats.from_dict(doc["global_stats"]),
            prior=WeightPrior.from_dict(doc["prior"]),
            reservoir_config=rcfg,
            reservoir=ReservoirWeights(np.array(res["W_in"], dtype=float), np.array(res["W"], dtype=float)),
            readout_prior=ReadoutPrior.from_dict(doc["readout_prior"]),
            initial_posterior=VariationalPosterior.from_dict(doc["initial_posterior"]),
            posterior=VariationalPosterior.from_dict(doc["posterior"]),
            loss_trace=[float(v) for v in doc["loss_trace"]],
            t_drive=int(res["t_drive"]),
            shapley=None if doc.get("shapley") is None else ShapleyReport.from_dict(doc["shapley"]),
            feature_names=tuple(doc["feature_names"]),
        )
    except (KeyError, TypeError, ValueError) as e:
        if isinstance(e, ArtifactError):
            raise
        raise ArtifactError(f"malformed artifact: {e!r}") from None


def save_model(
    model: Model, path: Union[str, Path], seed: int, config: Optional[dict] = None, extra: Optional[dict] = None
) -> dict:
    doc = model_to_dict(model, seed, config, extra)
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return doc


def read_artifact(path: Union[str, Path]) -> dict:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactError(f"cannot read artifact {path}: {e.strerror}") from None
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ArtifactError(f"{path}: not valid JSON ({e.msg})") from None


def load_model(path: Union[str, Path]) -> Model:
    return model_from_dict(read_artifact(path))
