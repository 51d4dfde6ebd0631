"""Binary checkpoint container: named float64 arrays plus a JSON header.

Layout (all integers little-endian):

    magic  b"FGCK" | version u32 | header_len u32 | header JSON (utf-8)
    count  u32
    per array: name_len u16 | name utf-8 | ndim u8 | dims u32... | f8 data

Model checkpoints store the architecture configuration in the header so a
file is self-describing; server checkpoints additionally carry run state
(task, round, accuracy record, per-task Gaussians, teacher parameters).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .gaussian import GaussianEmbedding
from .models import ArchConfig, ClientModels

MAGIC = b"FGCK"
VERSION = 1


def write_arrays(path, header: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays:
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def read_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise DataFormatError(f"{path}: not a checkpoint file")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DataFormatError(f"{path}: unsupported checkpoint version {version}")
    offset = 12
    header = json.loads(data[offset:offset + header_len].decode("utf-8"))
    offset += header_len
    (count,) = struct.unpack_from("<I", data, offset)
    offset += 4
    arrays: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{ndim}I", data, offset)
            offset += 4 * ndim
            nbytes = 8 * int(np.prod(shape, dtype=np.int64)) if ndim else 8
            arr = np.frombuffer(data, dtype="<f8", count=nbytes // 8, offset=offset)
            arrays[name] = arr.reshape(shape).astype(np.float64)
            offset += nbytes
    except (struct.error, ValueError) as exc:
        raise DataFormatError(f"{path}: truncated checkpoint ({exc})")
    return header, arrays


# -- model parameters ----------------------------------------------------------


def save_model(path, models: ClientModels, extra: dict | None = None) -> None:
    header = {"kind": "model", "arch": models.arch.to_dict(), **(extra or {})}
    write_arrays(path, header, [(n, p.data) for n, p in models.named_params()])


def load_model(path) -> ClientModels:
    header, arrays = read_arrays(path)
    if header.get("kind") != "model":
        raise DataFormatError(f"{path}: expected a model checkpoint")
    arch = ArchConfig.from_dict(header["arch"])
    models = ClientModels.init(arch, np.random.SeedSequence(0))
    for name, param in models.named_params():
        if name not in arrays:
            raise DataFormatError(f"{path}: missing parameter '{name}'")
        if arrays[name].shape != param.shape:
            raise DataFormatError(f"{path}: parameter '{name}' has wrong shape")
        param.data = arrays[name]
    return models


# -- server-side task checkpoints -----------------------------------------------


def save_server_state(path, *, arch: ArchConfig, task_index: int, round_index: int,
                      global_params: np.ndarray,
                      gaussians: list[GaussianEmbedding],
                      teacher_params: np.ndarray | None,
                      record_acc: np.ndarray, record_n: np.ndarray,
                      meta: dict) -> None:
    header = {
        "kind": "server",
        "arch": arch.to_dict(),
        "task_index": task_index,
        "round_index": round_index,
        "num_gaussians": len(gaussians),
        "has_teacher": teacher_params is not None,
        "meta": meta,
    }
    arrays = [("global.params", global_params),
              ("record.acc", record_acc), ("record.n", record_n)]
    if teacher_params is not None:
        arrays.append(("teacher.params", teacher_params))
    for i, g in enumerate(gaussians):
        arrays.append((f"gaussian.{i}.mean", g.mean))
        arrays.append((f"gaussian.{i}.cov", g.cov))
    write_arrays(path, header, arrays)


def load_server_state(path) -> dict:
    header, arrays = read_arrays(path)
    if header.get("kind") != "server":
        raise DataFormatError(f"{path}: expected a server checkpoint")
    gaussians = []
    for i in range(int(header["num_gaussians"])):
        gaussians.append(GaussianEmbedding(mean=arrays[f"gaussian.{i}.mean"],
                                           cov=arrays[f"gaussian.{i}.cov"]))
    return {
        "arch": ArchConfig.from_dict(header["arch"]),
        "task_index": int(header["task_index"]),
        "round_index": int(header["round_index"]),
        "global_params": arrays["global.params"],
        "teacher_params": arrays.get("teacher.params"),
        "gaussians": gaussians,
        "record_acc": arrays["record.acc"],
        "record_n": arrays["record.n"],
        "meta": header.get("meta", {}),
    }
