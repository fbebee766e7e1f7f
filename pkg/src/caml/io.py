"""On-disk formats: checkpoints, dataset shards and report tables.

Checkpoint layout::

    b"CAMLCKPT" | u32 version | u64 header length | JSON header | f64 LE payload | sha256

The digest covers every byte before it, so truncation or corruption is caught
before any array is decoded.
"""

import hashlib
import json
import os
import struct

import numpy as np

from .data import Dataset
from .models import ModelSpec
from .nn import AdamState
from .train import Checkpoint
from .world import MODALITY_ORDER, Modality, WorldConfig

MAGIC = b"CAMLCKPT"
CHECKPOINT_VERSION = 1
DATASET_VERSION = 1
_PREFIX = struct.Struct("<IQ")
_DIGEST = 32


class FormatError(ValueError):
    pass


class IntegrityError(ValueError):
    pass


def _f64le(a):
    return np.ascontiguousarray(a, dtype="<f8").tobytes()


def checkpoint_bytes(ckpt):
    names = list(ckpt.params)
    opt = ckpt.optimizer
    header = {
        "spec": ckpt.spec.to_json(),
        "config_hash": ckpt.config_hash,
        "epoch": ckpt.epoch,
        "history": ckpt.history,
        "params": [[n, list(np.shape(ckpt.params[n]))] for n in names],
        "optimizer": {
            "step": opt.step,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
            "shapes": [list(np.shape(m)) for m in opt.m],
        },
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = b"".join(_f64le(ckpt.params[n]) for n in names)
    payload += b"".join(_f64le(m) for m in opt.m) + b"".join(_f64le(v) for v in opt.v)
    body = MAGIC + _PREFIX.pack(CHECKPOINT_VERSION, len(blob)) + blob + payload
    return body + hashlib.sha256(body).digest()


def checkpoint_from_bytes(raw):
    if not raw.startswith(MAGIC):
        if MAGIC.startswith(raw):
            raise IntegrityError("checkpoint is truncated")
        raise FormatError("not a checkpoint file (bad magic)")
    if len(raw) < len(MAGIC) + _PREFIX.size + _DIGEST:
        raise IntegrityError("checkpoint is truncated")
    version, hlen = _PREFIX.unpack_from(raw, len(MAGIC))
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"checkpoint version {version}, this reader understands {CHECKPOINT_VERSION}")
    body, digest = raw[:-_DIGEST], raw[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise IntegrityError("checkpoint digest mismatch (truncated or corrupted)")
    start = len(MAGIC) + _PREFIX.size
    header = json.loads(body[start: start + hlen])
    flat = np.frombuffer(body[start + hlen:], dtype="<f8")
    pos = 0

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape, dtype=np.int64))
        if pos + n > flat.size:
            raise IntegrityError("payload shorter than the header declares")
        arr = flat[pos: pos + n].reshape(shape).astype(np.float64)
        pos += n
        return arr

    params = {name: take(shape) for name, shape in header["params"]}
    o = header["optimizer"]
    m = [take(s) for s in o["shapes"]]
    v = [take(s) for s in o["shapes"]]
    if pos != flat.size:
        raise IntegrityError("payload longer than the header declares")
    opt = AdamState(m, v, o["step"], o["beta1"], o["beta2"], o["eps"])
    return Checkpoint(ModelSpec.from_json(header["spec"]), params, opt, header["config_hash"], header["epoch"], header["history"])


def save_checkpoint(ckpt, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(ckpt))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return checkpoint_from_bytes(fh.read())


# -- datasets ----------------------------------------------------------------------


def save_dataset(dataset, directory, cfg, seed):
    """Write ``manifest.json`` and ``shard.npz`` describing ``dataset``."""
    os.makedirs(directory, exist_ok=True)
    arrays = {f"tokens_{m.value}": t for m, t in dataset.tokens.items()}
    arrays.update(actions=dataset.actions, seg=dataset.seg, seeds=dataset.seeds)
    shard = os.path.join(directory, "shard.npz")
    np.savez(shard, **arrays)
    with open(shard, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    manifest = {
        "format_version": DATASET_VERSION,
        "config": cfg.to_dict(),
        "seed": int(seed),
        "episode_seeds": [int(s) for s in dataset.seeds],
        "modalities": [m.value for m in dataset.modalities],
        "grid_size": dataset.grid_size,
        "n_agents": dataset.n_agents,
        "shard": "shard.npz",
        "sha256": digest,
    }
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_dataset(directory):
    """Read a dataset written by ``save_dataset``; returns ``(dataset, config, seed)``."""
    with open(os.path.join(directory, "manifest.json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != DATASET_VERSION:
        raise FormatError(f"dataset version {manifest.get('format_version')}, expected {DATASET_VERSION}")
    shard = os.path.join(directory, manifest["shard"])
    with open(shard, "rb") as fh:
        if hashlib.sha256(fh.read()).hexdigest() != manifest["sha256"]:
            raise IntegrityError("dataset shard digest mismatch")
    with np.load(shard) as z:
        tokens = {Modality(m): z[f"tokens_{m}"] for m in manifest["modalities"]}
        tokens = {m: tokens[m] for m in MODALITY_ORDER if m in tokens}
        ds = Dataset(tokens, z["actions"], z["seg"], z["seeds"], manifest["grid_size"], manifest["n_agents"])
    return ds, WorldConfig.from_dict(manifest["config"]), manifest["seed"]


# -- reports -------------------------------------------------------------------------


def export_report_csv(report, path):
    """Per-seed rows of a report as CSV (floats at full precision)."""
    from .experiment import metrics_csv

    with open(path, "w", newline="") as fh:
        fh.write(metrics_csv(report["per_seed"]))


def load_report(path):
    with open(path) as fh:
        report = json.load(fh)
    if report.get("format_version") != 1:
        raise FormatError(f"report version {report.get('format_version')}, expected 1")
    return report
