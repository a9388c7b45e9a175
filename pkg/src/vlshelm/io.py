"""Two-file container format and atomic file output.

Every artifact is stored as ``<stem>.json`` (manifest) plus ``<stem>.bin``
(little-endian arrays packed back to back in the order the manifest lists).

Manifest keys
-------------
type : str
    Artifact kind, e.g. ``"mesh"`` or ``"rom_dataset"``.
version : int
    Format version, currently 1.
arrays : list of dict
    ``name``, ``dtype`` (numpy little-endian code), ``shape``, ``offset`` and
    ``nbytes`` of each array inside the blob. Complex arrays use ``<c16``,
    i.e. interleaved float64 (re, im) pairs.
shapes : dict
    ``name -> shape`` for quick inspection.
fingerprints : dict
    Mesh, coefficient and blob (sha256) fingerprints.
tolerances : dict
    Solver tolerances the artifact was produced with, if any.
meta : dict
    Scalars specific to the artifact type.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError
from .fem import FunctionSpace, Wavefield
from .mesh import Mesh
from .rom import RomDataset, RomMatrices

__all__ = [
    "FORMAT_VERSION",
    "atomic_write_bytes",
    "atomic_write_text",
    "save_container",
    "load_container",
    "save_mesh",
    "load_mesh",
    "save_wavefield",
    "load_wavefield",
    "save_csr",
    "load_csr",
    "save_rom_dataset",
    "load_rom_dataset",
    "save_rom_matrices",
    "load_rom_matrices",
    "save_parameters",
    "load_parameters",
]

FORMAT_VERSION = 1


def atomic_write_bytes(path, data: bytes):
    """Write ``data`` to a temporary file in the target directory, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _stem(path):
    path = Path(path)
    if path.suffix in (".json", ".bin"):
        path = path.with_suffix("")
    return path


def _le(a):
    a = np.ascontiguousarray(a)
    if a.dtype == np.bool_:
        return a.astype("u1")
    return a.astype(a.dtype.newbyteorder("<"), copy=False)


def save_container(path, kind, arrays: dict, meta=None, fingerprints=None, tolerances=None):
    """Write ``arrays`` (ordered) and their manifest; returns the manifest path."""
    stem = _stem(path)
    entries, chunks, offset = [], [], 0
    for name, a in arrays.items():
        a = _le(a)
        raw = a.tobytes(order="C")
        entries.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape),
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    blob = b"".join(chunks)
    manifest = {
        "type": kind,
        "version": FORMAT_VERSION,
        "arrays": entries,
        "shapes": {e["name"]: e["shape"] for e in entries},
        "fingerprints": {**(fingerprints or {}), "blob_sha256": hashlib.sha256(blob).hexdigest()},
        "tolerances": tolerances or {},
        "meta": meta or {},
    }
    bin_path = stem.with_suffix(".bin")
    json_path = stem.with_suffix(".json")
    atomic_write_bytes(bin_path, blob)
    atomic_write_text(json_path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return json_path


def load_container(path, kind=None):
    """Read a container; returns ``(manifest, {name: array})``."""
    stem = _stem(path)
    try:
        manifest = json.loads(stem.with_suffix(".json").read_text())
        blob = stem.with_suffix(".bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read container {stem}: {exc}") from exc
    if kind is not None and manifest.get("type") != kind:
        raise ConfigError(f"{stem}: expected type {kind!r}, found {manifest.get('type')!r}")
    if manifest.get("version") != FORMAT_VERSION:
        raise ConfigError(f"{stem}: unsupported format version {manifest.get('version')}")
    if hashlib.sha256(blob).hexdigest() != manifest["fingerprints"].get("blob_sha256"):
        raise ConfigError(f"{stem}: blob checksum mismatch")
    arrays = {}
    for e in manifest["arrays"]:
        raw = blob[e["offset"]: e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(raw, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return manifest, arrays


def save_mesh(path, mesh: Mesh):
    return save_container(
        path,
        "mesh",
        {
            "vertices": mesh.vertices.astype("<f8"),
            "triangles": mesh.triangles.astype("<u4"),
            "boundary_edges": mesh.boundary_edges.astype("<u4"),
            "boundary_edge_triangle": mesh.boundary_edge_triangle.astype("<u4"),
        },
        meta={"label": mesh.label, "n_vertices": mesh.n_vertices, "n_triangles": mesh.n_triangles,
              "h": mesh.h, "area": mesh.area},
        fingerprints={"mesh": mesh.fingerprint},
    )


def load_mesh(path):
    manifest, a = load_container(path, "mesh")
    mesh = Mesh(
        a["vertices"].astype(np.float64),
        a["triangles"].astype(np.int64),
        a["boundary_edges"].astype(np.int64),
        a["boundary_edge_triangle"].astype(np.int64),
        label=manifest["meta"].get("label", ""),
    )
    if mesh.fingerprint != manifest["fingerprints"]["mesh"]:
        raise ConfigError(f"{path}: mesh fingerprint mismatch")
    return mesh


def save_wavefield(path, u: Wavefield, meta=None, tolerances=None):
    return save_container(
        path,
        "wavefield",
        {"dofs": u.dofs.astype("<c16")},
        meta={"order": u.space.order, **(meta or {})},
        fingerprints={"mesh": u.space.mesh.fingerprint},
        tolerances=tolerances,
    )


def load_wavefield(path, space: FunctionSpace | None = None, mesh: Mesh | None = None):
    """Reload a wavefield; the space is rebuilt from ``mesh`` unless given."""
    manifest, a = load_container(path, "wavefield")
    if space is None:
        if mesh is None:
            raise ConfigError("load_wavefield needs a space or a mesh")
        space = FunctionSpace(mesh, manifest["meta"]["order"])
    if space.mesh.fingerprint != manifest["fingerprints"]["mesh"]:
        raise ConfigError(f"{path}: wavefield belongs to a different mesh")
    return Wavefield(space, a["dofs"].astype(np.complex128))


def save_csr(path, a):
    a = sp.csr_matrix(a)
    a.sort_indices()
    index_dtype = "<u4" if a.nnz < 2**32 and max(a.shape) < 2**32 else "<u8"
    return save_container(
        path,
        "csr",
        {
            "indptr": a.indptr.astype(index_dtype),
            "indices": a.indices.astype(index_dtype),
            "data": a.data.astype("<c16"),
        },
        meta={"rows": a.shape[0], "cols": a.shape[1], "nnz": int(a.nnz)},
    )


def load_csr(path):
    manifest, a = load_container(path, "csr")
    shape = (manifest["meta"]["rows"], manifest["meta"]["cols"])
    return sp.csr_matrix(
        (a["data"].astype(np.complex128), a["indices"].astype(np.int64), a["indptr"].astype(np.int64)),
        shape=shape,
    )


_DATASET_ARRAYS = ("k_values", "boundary_dofs", "traces", "dk_traces", "responses", "dk_responses",
                   "source_positions")


def save_rom_dataset(path, data: RomDataset, tolerances=None):
    arrays = {
        "k_values": np.asarray(data.k_values, dtype="<f8"),
        "boundary_dofs": np.asarray(data.boundary_dofs, dtype="<u4"),
        "traces": np.asarray(data.traces, dtype="<c16"),
        "dk_traces": np.asarray(data.dk_traces, dtype="<c16"),
        "responses": np.asarray(data.responses, dtype="<c16"),
        "dk_responses": np.asarray(data.dk_responses, dtype="<c16"),
        "source_positions": np.asarray(data.source_positions, dtype="<f8"),
    }
    return save_container(
        path,
        "rom_dataset",
        arrays,
        meta={"N": int(len(data.k_values)), "M": int(len(data.source_positions)), "order": data.order,
              "source_radius": data.source_radius, "k_grid": [float(k) for k in data.k_values],
              "source_list": np.asarray(data.source_positions).tolist()},
        fingerprints={"mesh": data.mesh_fingerprint, "q": data.q_fingerprint},
        tolerances=tolerances,
    )


def load_rom_dataset(path):
    manifest, a = load_container(path, "rom_dataset")
    return RomDataset(
        k_values=a["k_values"].astype(np.float64),
        order=int(manifest["meta"]["order"]),
        boundary_dofs=a["boundary_dofs"].astype(np.int64),
        traces=a["traces"].astype(np.complex128),
        dk_traces=a["dk_traces"].astype(np.complex128),
        responses=a["responses"].astype(np.complex128),
        dk_responses=a["dk_responses"].astype(np.complex128),
        source_positions=a["source_positions"].astype(np.float64),
        source_radius=float(manifest["meta"]["source_radius"]),
        mesh_fingerprint=manifest["fingerprints"]["mesh"],
        q_fingerprint=manifest["fingerprints"]["q"],
    )


def save_rom_matrices(path, rom: RomMatrices, meta=None, fingerprints=None):
    return save_container(
        path,
        "rom_matrices",
        {
            "mass": np.asarray(rom.mass, dtype="<c16"),
            "stiffness": np.asarray(rom.stiffness, dtype="<c16"),
            "boundary": np.asarray(rom.boundary, dtype="<c16"),
        },
        meta={"layout": "X[i, j, r, s] = conj(u_j^r)^T A u_i^s", **(meta or {})},
        fingerprints=fingerprints,
    )


def load_rom_matrices(path):
    _, a = load_container(path, "rom_matrices")
    return RomMatrices(a["mass"].astype(np.complex128), a["stiffness"].astype(np.complex128),
                       a["boundary"].astype(np.complex128))


def save_parameters(path, values, shape=None, meta=None, fingerprints=None):
    """Cellwise parameter vector (e.g. an inversion estimate)."""
    values = np.asarray(values, dtype="<f8")
    return save_container(path, "parameters", {"values": values},
                          meta={"grid_shape": list(shape) if shape else None, **(meta or {})},
                          fingerprints=fingerprints)


def load_parameters(path):
    _, a = load_container(path, "parameters")
    return a["values"].astype(np.float64)
