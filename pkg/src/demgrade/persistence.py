"""Versioned on-disk format for the three model kinds.

A saved model is a directory holding ``model.json`` and, for SVM and CNN, a
binary blob of little-endian float32 values. The manifest records a SHA-256
of the canonical JSON payload and of the blob so truncation or tampering is
detected on load.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import cnn, rf, svm
from .errors import ArgumentError, CorruptModelError, VersionError

FORMAT_VERSION = 1
MANIFEST = "model.json"
BLOB = "params.f32"


def _canonical(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def model_kind(model) -> str:
    if isinstance(model, rf.ForestModel):
        return "rf"
    if isinstance(model, svm.SvmModel):
        return "svm"
    if isinstance(model, cnn.CnnModel):
        return "cnn"
    raise ArgumentError(f"cannot persist object of type {type(model).__name__}")


# -- encoders ----------------------------------------------------------------


def _encode_rf(model: rf.ForestModel):
    payload = {
        "n_features": model.n_features,
        "n_classes": model.n_classes,
        "config": model.config.to_dict(),
        "trees": [rf.node_to_record(t) for t in model.trees],
    }
    return payload, b""


def _encode_svm(model: svm.SvmModel):
    rows = np.unique(np.concatenate([m.sv_indices for m in model.machines]))
    pos = {int(r): i for i, r in enumerate(rows)}
    d = model.n_features
    matrix = np.zeros((len(rows), d), dtype="<f4")
    machines = []
    for m in model.machines:
        local = [pos[int(r)] for r in m.sv_indices]
        matrix[local] = m.support_vectors
        machines.append(
            {
                "support_vectors": local,
                "dual_coefs": [float(v) for v in m.dual_coefs],
                "bias": float(m.bias),
                "converged": bool(m.converged),
                "iterations": int(m.iterations),
            }
        )
    payload = {
        "classes": list(model.classes),
        "class_pairs": [list(p) for p in model.class_pairs],
        "strategy": model.strategy,
        "params": model.params.to_dict(),
        "mean": [float(v) for v in model.mean],
        "scale": [float(v) for v in model.scale],
        "n_support_rows": len(rows),
        "machines": machines,
    }
    return payload, matrix.tobytes()


def _encode_cnn(model: cnn.CnnModel):
    shapes = cnn.param_shapes(model.architecture, model.input_shape)
    chunks = []
    for p in model.params:
        if p is not None:
            chunks.extend(np.asarray(a, dtype="<f4").ravel() for a in p)
    blob = np.concatenate(chunks).astype("<f4").tobytes() if chunks else b""
    payload = {
        "architecture": [cnn.layer_to_record(layer) for layer in model.architecture],
        "input_shape": list(model.input_shape),
        "param_shapes": [None if s is None else [list(s[0]), list(s[1])] for s in shapes],
        "seed": model.seed,
        "config": model.config.to_dict(),
    }
    return payload, blob


# -- decoders ----------------------------------------------------------------


def _decode_rf(payload, blob):
    return rf.ForestModel(
        trees=tuple(rf.node_from_record(t) for t in payload["trees"]),
        n_features=int(payload["n_features"]),
        config=rf.RfConfig(**payload["config"]),
        n_classes=int(payload["n_classes"]),
    )


def _decode_svm(payload, blob):
    d = len(payload["mean"])
    n_rows = int(payload["n_support_rows"])
    if len(blob) != n_rows * d * 4:
        raise CorruptModelError(f"support-vector blob holds {len(blob)} bytes, expected {n_rows * d * 4}")
    matrix = np.frombuffer(blob, dtype="<f4").reshape(n_rows, d).astype(np.float32)
    params = svm.KernelParams(**payload["params"])
    machines = []
    for m in payload["machines"]:
        idx = np.asarray(m["support_vectors"], dtype=np.int64)
        machines.append(
            svm.BinarySvm(
                support_vectors=matrix[idx],
                dual_coefs=np.asarray(m["dual_coefs"], dtype=np.float64),
                bias=float(m["bias"]),
                params=params,
                sv_indices=idx,
                converged=bool(m["converged"]),
                iterations=int(m["iterations"]),
            )
        )
    return svm.SvmModel(
        classes=tuple(payload["classes"]),
        class_pairs=tuple(tuple(p) for p in payload["class_pairs"]),
        machines=tuple(machines),
        mean=np.asarray(payload["mean"], dtype=np.float64),
        scale=np.asarray(payload["scale"], dtype=np.float64),
        params=params,
        strategy=payload["strategy"],
    )


def _decode_cnn(payload, blob):
    arch = tuple(cnn.layer_from_record(r) for r in payload["architecture"])
    input_shape = tuple(payload["input_shape"])
    shapes = cnn.param_shapes(arch, input_shape)
    flat = np.frombuffer(blob, dtype="<f4")
    expected = sum(int(np.prod(s[0])) + int(np.prod(s[1])) for s in shapes if s is not None)
    if flat.size != expected or len(blob) % 4:
        raise CorruptModelError(f"parameter blob holds {len(blob)} bytes, expected {expected * 4}")
    params, at = [], 0
    for s in shapes:
        if s is None:
            params.append(None)
            continue
        pair = []
        for shape in s:
            k = int(np.prod(shape))
            pair.append(flat[at : at + k].reshape(shape).astype(np.float32))
            at += k
        params.append(pair)
    return cnn.CnnModel(arch, input_shape, params, int(payload["seed"]), cnn.CnnConfig(**payload["config"]), "float32")


_CODECS = {
    "rf": (_encode_rf, _decode_rf),
    "svm": (_encode_svm, _decode_svm),
    "cnn": (_encode_cnn, _decode_cnn),
}


def save_model(model, path, metadata=None) -> Path:
    """Write ``model`` into directory ``path`` (created if needed)."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    kind = model_kind(model)
    payload, blob = _CODECS[kind][0](model)
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "metadata": metadata or {},
        "model": payload,
        "model_sha256": _sha(_canonical(payload)),
        "blob": BLOB if blob else None,
        "blob_bytes": len(blob),
        "blob_sha256": _sha(blob) if blob else None,
    }
    if blob:
        (out / BLOB).write_bytes(blob)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return out


def load_bundle(path):
    """Return ``(model, metadata)`` from a directory written by :func:`save_model`."""
    src = Path(path)
    manifest_path = src / MANIFEST if src.is_dir() else src
    try:
        manifest = json.loads(manifest_path.read_text())
    except FileNotFoundError as exc:
        raise CorruptModelError(f"no model manifest at {manifest_path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"unreadable model manifest {manifest_path}: {exc}") from exc
    if not isinstance(manifest, dict) or "format_version" not in manifest:
        raise CorruptModelError(f"{manifest_path} is missing its format_version")
    version = manifest["format_version"]
    if version != FORMAT_VERSION:
        raise VersionError(version, FORMAT_VERSION)
    kind = manifest.get("kind")
    if kind not in _CODECS:
        raise CorruptModelError(f"unknown model kind {kind!r}")
    payload = manifest.get("model")
    if payload is None or _sha(_canonical(payload)) != manifest.get("model_sha256"):
        raise CorruptModelError("model payload digest mismatch")
    blob = b""
    if manifest.get("blob"):
        blob_path = manifest_path.parent / manifest["blob"]
        try:
            blob = blob_path.read_bytes()
        except FileNotFoundError as exc:
            raise CorruptModelError(f"missing parameter blob {blob_path}") from exc
        if len(blob) != manifest.get("blob_bytes") or _sha(blob) != manifest.get("blob_sha256"):
            raise CorruptModelError(f"parameter blob {blob_path} is truncated or altered")
    try:
        model = _CODECS[kind][1](payload, blob)
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"malformed {kind} payload: {exc}") from exc
    return model, manifest.get("metadata", {})


def load_model(path):
    return load_bundle(path)[0]
