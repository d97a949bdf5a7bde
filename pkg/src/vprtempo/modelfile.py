"""Binary model persistence.

Byte layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"VPRT"
    4       2     format version (uint16), currently 1
    6       2     reserved, zero
    8       4     header length H in bytes (uint32)
    12      H     UTF-8 JSON header
    12+H    ...   arrays, float32 little-endian, packed in header order
    end-32  32    SHA-256 of every preceding byte

The JSON header carries ``sizes`` (input, feature, per-module outputs),
``hyperparams``, ``seed``, ``module_seeds``, ``clocks``, the effective run
``config`` and an ``arrays`` table of ``{"module", "name", "shape"}``
entries. Per module the arrays are, in order: ``if_exc``, ``if_inh``,
``f_theta``, ``f_rate``, ``fo_exc``, ``fo_inh``, ``o_theta``, ``o_rate``.
Sparsity masks are not stored; a connection is live exactly when its stored
weight is non-zero.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .ensemble import Ensemble, PlaceAssignment
from .errors import ModelFileError
from .snn import AnnealClock, Hyperparams, LayerPair, ModuleNetwork, NeuronState

MAGIC = b"VPRT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHHI")
_DIGEST = 32
ARRAY_NAMES = ("if_exc", "if_inh", "f_theta", "f_rate", "fo_exc", "fo_inh", "o_theta", "o_rate")


def _module_arrays(m: ModuleNetwork) -> list[np.ndarray]:
    return [
        m.layer_if.w_exc, m.layer_if.w_inh, m.feature_state.theta, m.feature_state.target_rate,
        m.layer_fo.w_exc, m.layer_fo.w_inh, m.output_state.theta, m.output_state.target_rate,
    ]


def encode_model(ens: Ensemble, config: Optional[dict] = None) -> bytes:
    first = ens.modules[0]
    table, blobs = [], []
    for k, m in enumerate(ens.modules):
        for name, arr in zip(ARRAY_NAMES, _module_arrays(m)):
            table.append({"module": k, "name": name, "shape": list(arr.shape)})
            blobs.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header = {
        "sizes": {
            "input": first.input_size,
            "feature": first.feature_size,
            "outputs": list(ens.assignment.sizes),
        },
        "hyperparams": asdict(ens.hyper),
        "seed": ens.seed,
        "module_seeds": [m.seed for m in ens.modules],
        "clocks": [[m.clock.t, m.clock.total] for m in ens.modules],
        "config": config or {},
        "arrays": table,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    body = _PREFIX.pack(MAGIC, FORMAT_VERSION, 0, len(head)) + head + b"".join(blobs)
    return body + hashlib.sha256(body).digest()


def save_model(path, ens: Ensemble, config: Optional[dict] = None) -> str:
    """Write the ensemble; returns the hex checksum."""
    data = encode_model(ens, config)
    Path(path).write_bytes(data)
    return data[-_DIGEST:].hex()


def _layer(w_exc: np.ndarray, w_inh: np.ndarray, dense: bool) -> LayerPair:
    if dense:
        full = np.ones(w_exc.shape, dtype=bool)
        return LayerPair(w_exc, w_inh, full, full.copy(), dense=True)
    return LayerPair(w_exc, w_inh, w_exc != 0, w_inh != 0, dense=False)


def decode_model(data: bytes) -> tuple[Ensemble, dict]:
    if len(data) < _PREFIX.size + _DIGEST:
        raise ModelFileError("model file is truncated")
    magic, version, _, head_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise ModelFileError("not a model file (bad magic)")
    if version != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format version {version}")
    body, digest = data[:-_DIGEST], data[-_DIGEST:]
    if hashlib.sha256(body).digest() != digest:
        raise ModelFileError("model checksum mismatch (file corrupt)")
    try:
        header = json.loads(body[_PREFIX.size:_PREFIX.size + head_len].decode("utf-8"))
        hyper = Hyperparams(**header["hyperparams"])
        sizes = header["sizes"]
        table = header["arrays"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFileError(f"malformed model header: {exc}") from exc

    dt = hyper.np_dtype
    offset = _PREFIX.size + head_len
    arrays: dict[tuple[int, str], np.ndarray] = {}
    for entry in table:
        count = int(np.prod(entry["shape"]))
        end = offset + 4 * count
        if end > len(body):
            raise ModelFileError("model array section is truncated")
        raw = np.frombuffer(body, dtype="<f4", count=count, offset=offset)
        arrays[(entry["module"], entry["name"])] = raw.reshape(entry["shape"]).astype(dt)
        offset = end
    if offset != len(body):
        raise ModelFileError("unexpected trailing bytes before checksum")

    modules = []
    for k, n_out in enumerate(sizes["outputs"]):
        try:
            a = [arrays[(k, name)] for name in ARRAY_NAMES]
        except KeyError as exc:
            raise ModelFileError(f"module {k} is missing array {exc}") from exc

        def state(theta, rate):
            return NeuronState(theta, rate, np.zeros_like(theta), np.zeros_like(theta))

        t, total = header["clocks"][k]
        modules.append(ModuleNetwork(
            input_size=sizes["input"],
            feature_size=sizes["feature"],
            output_size=n_out,
            layer_if=_layer(a[0], a[1], dense=False),
            layer_fo=_layer(a[4], a[5], dense=True),
            feature_state=state(a[2], a[3]),
            output_state=state(a[6], a[7]),
            hyper=hyper,
            clock=AnnealClock(t, total),
            seed=header["module_seeds"][k],
        ))
    ens = Ensemble(modules, PlaceAssignment(tuple(sizes["outputs"])), header["seed"])
    return ens, header


def load_model(path) -> tuple[Ensemble, dict]:
    """Read and verify a model file; returns the ensemble and its JSON header."""
    return decode_model(Path(path).read_bytes())


def model_checksum(path) -> str:
    return Path(path).read_bytes()[-_DIGEST:].hex()
