"""Versioned JSON persistence for trained models."""

from __future__ import annotations

import json

from .gbdt import GbdtModel
from .svm import RbfSvmModel

MODEL_FORMAT_VERSION = 1


def save_model(model, path, training_digest: str = ""):
    doc = {
        "format": "sievemal-model",
        "version": MODEL_FORMAT_VERSION,
        "training_digest": training_digest,
        "model": model.to_dict(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != "sievemal-model" or doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unrecognized model file {path}")
    body = doc["model"]
    if body["kind"] == "gbdt":
        return GbdtModel.from_dict(body)
    if body["kind"] == "svm":
        return RbfSvmModel.from_dict(body)
    raise ValueError(f"unknown model kind {body['kind']!r}")
