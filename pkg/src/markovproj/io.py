"""JSON, CSV and binary formats for the core types.

CSV headers are fixed:

* coefficients  ``t,z,b,a`` (one row per (t, z) node)
* jump kernel   ``t,z,y,n`` (tail masses as rows with ``y = -inf`` / ``inf``)
* densities     ``t,x,p``
* reports       ``t,ks,w1,m1,m2,m3,m4``

Floats are written with ``%.17g`` so every value survives a round trip
exactly.  JSON documents carry ``"format"`` and ``"version"`` keys.

Binary ensemble layout (little endian)::

    magic    8 bytes  b"MPENS\\x00\\x00\\x01"
    version  u32
    d        u32
    n_paths  u64
    n_steps  u64
    t_start  f64
    t_end    f64
    seed     u64
    flags    u32      bit 0 drift, bit 1 diffusion_sq, bit 2 aux
    aux_dim  u32
    values        f64[n_paths, n_steps + 1, d]
    drift         f64[n_paths, n_steps, d]        if flag
    diffusion_sq  f64[n_paths, n_steps, d, d]     if flag
    aux           f64[n_paths, n_steps + 1, aux_dim] if flag
    n_marks  u64
    path     u32[n_marks]
    step     u32[n_marks]
    size     f64[n_marks, d]
"""

from __future__ import annotations

import csv
import io as _io
import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .core import DensityField, JumpMarks, MarginalComparison, MimicReport, PathEnsemble, ProjectedCoefficients, TimeGrid
from .errors import ConfigError

FORMAT_VERSION = 1
MAGIC = b"MPENS\x00\x00\x01"
_HEADER = struct.Struct("<8sIIQQddQII")


def _fmt(v) -> str:
    return "%.17g" % v


def _write_csv(path, header, rows) -> None:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def _read_csv(path, header) -> np.ndarray:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        got = next(r)
        if got != list(header):
            raise ConfigError(f"{path}: expected header {','.join(header)}, got {','.join(got)}")
        rows = [[float(v) for v in row] for row in r if row]
    return np.array(rows, dtype=float).reshape(-1, len(header))


def _dump_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _load_json(path, fmt) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != fmt:
        raise ConfigError(f"{path}: not a {fmt} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported version {doc.get('version')}")
    return doc


# ---------------------------------------------------------------------------
# projected coefficients
# ---------------------------------------------------------------------------


def coefficients_to_dict(c: ProjectedCoefficients) -> dict:
    return dict(format="projected-coefficients", version=FORMAT_VERSION,
                times=c.times.tolist(), z=c.z.tolist(), b=c.b.tolist(), a=c.a.tolist(), y=c.y.tolist(),
                n=c.n.tolist(), tail_lower=c.tail_lower.tolist(), tail_upper=c.tail_upper.tolist(),
                jump_cutoff=c.jump_cutoff, filled=c.filled.astype(int).tolist(),
                integrability_bound=c.integrability_bound, stable_c=c.stable_c, stable_beta=c.stable_beta)


def coefficients_from_dict(doc: dict) -> ProjectedCoefficients:
    keys = ("times", "z", "b", "a", "y", "n", "tail_lower", "tail_upper", "jump_cutoff", "filled",
            "integrability_bound", "stable_c", "stable_beta")
    return ProjectedCoefficients(**{k: doc[k] for k in keys})


def save_coefficients_json(c: ProjectedCoefficients, path) -> None:
    _dump_json(path, coefficients_to_dict(c))


def load_coefficients_json(path) -> ProjectedCoefficients:
    return coefficients_from_dict(_load_json(path, "projected-coefficients"))


def save_coefficients_csv(c: ProjectedCoefficients, path, kernel_path=None) -> None:
    """``t,z,b,a`` table and, if ``kernel_path`` is given, the ``t,z,y,n`` kernel table."""
    K, I = c.b.shape
    tt = np.repeat(c.times, I)
    zz = np.tile(c.z, K)
    _write_csv(path, ("t", "z", "b", "a"), zip(tt, zz, c.b.ravel(), c.a.ravel()))
    if kernel_path is not None:
        rows = []
        for k in range(K):
            for i in range(I):
                t, z = c.times[k], c.z[i]
                rows.append((t, z, -np.inf, c.tail_lower[k, i]))
                rows.extend((t, z, yj, c.n[k, j, i]) for j, yj in enumerate(c.y))
                rows.append((t, z, np.inf, c.tail_upper[k, i]))
        _write_csv(kernel_path, ("t", "z", "y", "n"), rows)


def load_coefficients_csv(path, kernel_path=None, **kwargs) -> ProjectedCoefficients:
    tab = _read_csv(path, ("t", "z", "b", "a"))
    times = np.unique(tab[:, 0])
    z = np.unique(tab[:, 1])
    K, I = len(times), len(z)
    b = tab[:, 2].reshape(K, I)
    a = tab[:, 3].reshape(K, I)
    extra = {}
    if kernel_path is not None:
        ker = _read_csv(kernel_path, ("t", "z", "y", "n"))
        J = len(ker) // (K * I) - 2
        ker = ker.reshape(K, I, J + 2, 4)
        extra = dict(y=ker[0, 0, 1:-1, 2], n=np.transpose(ker[:, :, 1:-1, 3], (0, 2, 1)),
                     tail_lower=ker[:, :, 0, 3], tail_upper=ker[:, :, -1, 3])
    return ProjectedCoefficients(times=times, z=z, b=b, a=a, **extra, **kwargs)


# ---------------------------------------------------------------------------
# density fields
# ---------------------------------------------------------------------------


def save_density_csv(f: DensityField, path) -> None:
    K, I = f.p.shape
    _write_csv(path, ("t", "x", "p"), zip(np.repeat(f.times, I), np.tile(f.x, K), f.p.ravel()))


def load_density_csv(path, validate: bool = True) -> DensityField:
    tab = _read_csv(path, ("t", "x", "p"))
    times = np.unique(tab[:, 0])
    x = np.unique(tab[:, 1])
    return DensityField(x=x, times=times, p=tab[:, 2].reshape(len(times), len(x)), validate=validate)


def density_to_dict(f: DensityField) -> dict:
    return dict(format="density-field", version=FORMAT_VERSION, x=f.x.tolist(), times=f.times.tolist(),
                p=f.p.tolist())


def density_from_dict(doc: dict, validate: bool = True) -> DensityField:
    return DensityField(x=doc["x"], times=doc["times"], p=doc["p"], validate=validate)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


def report_to_dict(r: MimicReport) -> dict:
    return dict(format="mimic-report", version=FORMAT_VERSION, route=r.route,
                entries=[dict(asdict(e), moments=list(e.moments), reference_moments=list(e.reference_moments))
                         for e in r.entries])


def report_from_dict(doc: dict) -> MimicReport:
    return MimicReport(route=doc["route"], entries=[MarginalComparison(**e) for e in doc["entries"]])


def save_report_json(r: MimicReport, path) -> None:
    _dump_json(path, report_to_dict(r))


def load_report_json(path) -> MimicReport:
    return report_from_dict(_load_json(path, "mimic-report"))


def save_report_csv(r: MimicReport, path) -> None:
    _write_csv(path, ("t", "ks", "w1", "m1", "m2", "m3", "m4"),
               ((e.t, e.ks, e.w1, *e.moments) for e in r.entries))


def load_report_csv(path) -> np.ndarray:
    return _read_csv(path, ("t", "ks", "w1", "m1", "m2", "m3", "m4"))


def save_moments_csv(times, moments, path) -> None:
    """Per-checkpoint moment summary, ``t,m1,m2,m3,m4``."""
    _write_csv(path, ("t", "m1", "m2", "m3", "m4"), ((t, *m) for t, m in zip(times, moments)))


# ---------------------------------------------------------------------------
# binary ensembles
# ---------------------------------------------------------------------------


def save_ensemble(e: PathEnsemble, path) -> None:
    flags = (e.drift is not None) | (e.diffusion_sq is not None) << 1 | (e.aux is not None) << 2
    aux_dim = 0 if e.aux is None else e.aux.shape[2]
    marks = e.jumps if e.jumps is not None else JumpMarks.empty(e.dim)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, e.dim, e.n_paths, e.grid.n_steps, e.grid.t_start,
                              e.grid.t_end, int(e.seed), int(flags), aux_dim))
        for arr in (e.values, e.drift, e.diffusion_sq, e.aux):
            if arr is not None:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", len(marks)))
        fh.write(np.asarray(marks.path, dtype="<u4").tobytes())
        fh.write(np.asarray(marks.step, dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(marks.size, dtype="<f8").tobytes())


def load_ensemble(path) -> PathEnsemble:
    raw = Path(path).read_bytes()
    magic, version, d, n, K, t0, t1, seed, flags, aux_dim = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ConfigError(f"{path}: not an ensemble dump")
    if version != FORMAT_VERSION:
        raise ConfigError(f"{path}: unsupported ensemble version {version}")
    pos = _HEADER.size

    def take(dtype, shape):
        nonlocal pos
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=pos).reshape(shape)
        pos += count * np.dtype(dtype).itemsize
        return arr.astype(dtype[1:] if dtype.startswith("<") else dtype)

    values = take("<f8", (n, K + 1, d))
    drift = take("<f8", (n, K, d)) if flags & 1 else None
    diff2 = take("<f8", (n, K, d, d)) if flags & 2 else None
    aux = take("<f8", (n, K + 1, aux_dim)) if flags & 4 else None
    (m,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    mp = take("<u4", (m,)).astype(np.int64)
    ms = take("<u4", (m,)).astype(np.int64)
    size = take("<f8", (m, d))
    return PathEnsemble(grid=TimeGrid(t0, t1, K), seed=seed, values=values, drift=drift, diffusion_sq=diff2,
                        jumps=JumpMarks(mp, ms, size), aux=aux)


def grid_to_dict(g: TimeGrid) -> dict:
    return dict(t_start=g.t_start, t_end=g.t_end, n_steps=g.n_steps)
