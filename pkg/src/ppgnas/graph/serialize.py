"""Checkpoint container shared by float graphs and integer graphs.

Layout (all integers little-endian)::

    magic     8 bytes   e.g. b"PPGNASG\\0" or b"PPGNASI\\0"
    version   u32
    json_len  u32
    json      UTF-8 document; ``tensors`` lists name/dtype/shape/offset/nbytes
    blob      raw little-endian tensor bytes, concatenated in ``tensors`` order
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ..tensor import Tensor
from .model import Model
from .spec import Graph

GRAPH_MAGIC = b"PPGNASG\0"
FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def pack(magic: bytes, doc: dict, arrays: list[tuple[str, np.ndarray]], version: int = FORMAT_VERSION) -> bytes:
    entries, chunks, offset = [], [], 0
    for name, arr in arrays:
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        raw = np.ascontiguousarray(le).tobytes()
        entries.append({"name": name, "dtype": le.dtype.str, "shape": list(arr.shape), "offset": offset,
                        "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    doc = {**doc, "tensors": entries}
    body = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    return magic + struct.pack("<II", version, len(body)) + body + b"".join(chunks)


def unpack(magic: bytes, data: bytes, max_version: int = FORMAT_VERSION) -> tuple[dict, dict[str, np.ndarray]]:
    if data[:8] != magic:
        raise FormatError(f"bad magic {data[:8]!r}, expected {magic!r}")
    version, n = struct.unpack("<II", data[8:16])
    if version > max_version:
        raise FormatError(f"file version {version} is newer than supported {max_version}")
    doc = json.loads(data[16:16 + n].decode())
    base = 16 + n
    arrays = {}
    for e in doc["tensors"]:
        start = base + e["offset"]
        buf = data[start:start + e["nbytes"]]
        if len(buf) != e["nbytes"]:
            raise FormatError(f"truncated tensor {e['name']}")
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return doc, arrays


def write_atomic(path: str | os.PathLike, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def model_to_bytes(obj: Model | Graph) -> bytes:
    if isinstance(obj, Graph):
        return pack(GRAPH_MAGIC, {"format": "ppgnas-graph", "graph": obj.to_dict(), "meta": {}}, [])
    arrays = []
    for n in obj.graph.nodes:
        for name, t in obj.params[n.id].items():
            arrays.append((f"{n.id}/param/{name}", t.data.astype(np.float32, copy=False)))
        for name, b in obj.buffers[n.id].items():
            arrays.append((f"{n.id}/buffer/{name}", b.astype(np.float32, copy=False)))
    doc = {"format": "ppgnas-graph", "graph": obj.graph.to_dict(), "meta": obj.meta}
    return pack(GRAPH_MAGIC, doc, arrays)


def model_from_bytes(data: bytes) -> Model:
    doc, arrays = unpack(GRAPH_MAGIC, data)
    graph = Graph.from_dict(doc["graph"])
    params = {n.id: {} for n in graph.nodes}
    buffers = {n.id: {} for n in graph.nodes}
    for key, arr in arrays.items():
        node_id, kind, name = key.split("/")
        if kind == "param":
            params[node_id][name] = Tensor(arr.astype(np.float32), requires_grad=True, dtype=np.float32)
        else:
            buffers[node_id][name] = arr.astype(np.float32)
    if not arrays:
        return Model.init(graph, 0, doc.get("meta"))
    return Model(graph, params, buffers, doc.get("meta"))


def save_model(obj: Model | Graph, path: str | os.PathLike) -> None:
    write_atomic(path, model_to_bytes(obj))


def load_model(path: str | os.PathLike) -> Model:
    return model_from_bytes(Path(path).read_bytes())


def load_graph(path: str | os.PathLike) -> Graph:
    doc, _ = unpack(GRAPH_MAGIC, Path(path).read_bytes())
    return Graph.from_dict(doc["graph"])
