"""Patient files, draw files, JSON helpers and all-or-nothing output directories."""
from __future__ import annotations

import csv
import json
import os
import shutil
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import DomainError
from .hmc import ChainDraws
from .model import PatientRecord

REQUIRED = ("time", "status", "age", "region")
INT_COLUMNS = {"status", "region", "sex", "deprivation"}
SAMPLER_COLUMNS = ("lp__", "accept_stat__", "n_leapfrog__", "divergent__")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


# ---------------------------------------------------------------------------
# patients


def load_patient_columns(path, covariates=(), key_columns=()) -> dict:
    """Read a patient CSV into ``{column: array}``.

    ``time, status, age, region`` are required, as are any ``covariates`` and
    life-table ``key_columns``.  Every bad cell is reported with its line
    number.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DomainError(f"{path}: empty file, header row expected")
        header = [h.strip() for h in header]
        missing = [c for c in (*REQUIRED, *covariates, *key_columns) if c not in header]
        if missing:
            raise DomainError(f"{path}: missing declared columns {missing}")
        if len(set(header)) != len(header):
            raise DomainError(f"{path}: duplicate column names")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DomainError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            vals = {}
            for name, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DomainError(f"{path}:{lineno}: column {name!r} is not numeric: {cell!r}") from None
                if name in INT_COLUMNS:
                    if v != int(v):
                        raise DomainError(f"{path}:{lineno}: column {name!r} must be an integer: {cell!r}")
                    v = int(v)
                vals[name] = v
            if vals["status"] not in (0, 1):
                raise DomainError(f"{path}:{lineno}: status must be 0 or 1, got {vals['status']}")
            if not (np.isfinite(vals["time"]) and vals["time"] >= 0):
                raise DomainError(f"{path}:{lineno}: time must be finite and >= 0, got {vals['time']}")
            rows.append(vals)
    if not rows:
        raise DomainError(f"{path}: no data rows")
    out = {}
    for name in header:
        dtype = np.int64 if name in INT_COLUMNS else float
        out[name] = np.array([r[name] for r in rows], dtype=dtype)
    return out


def records_from_columns(columns: dict, key_columns=()) -> list:
    """Split a column dict into ``PatientRecord`` objects."""
    n = len(columns["time"])
    other = [c for c in columns if c not in (*REQUIRED, "year")]
    out = []
    for i in range(n):
        out.append(PatientRecord(
            time=float(columns["time"][i]),
            status=int(columns["status"][i]),
            age=float(columns["age"][i]),
            region=int(columns["region"][i]),
            covariates={c: columns[c][i].item() for c in other},
            year=float(columns["year"][i]) if "year" in columns else None,
            strata={c: columns[c][i].item() for c in key_columns},
        ))
    return out


def load_patients(path, covariates=(), key_columns=()) -> list:
    """Read a patient CSV as a list of ``PatientRecord``."""
    return records_from_columns(load_patient_columns(path, covariates, key_columns), key_columns)


def save_patient_columns(columns: dict, path) -> None:
    names = list(columns)
    n = len(columns[names[0]])
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([_fmt(columns[c][i]) for c in names])


# ---------------------------------------------------------------------------
# draws


def save_chain(chain: ChainDraws, directory, index: int) -> list[Path]:
    """Write one chain as ``draws_chain{k}.csv`` (constrained values plus
    sampler columns), ``unconstrained_chain{k}.csv`` and a small JSON with the
    adapted step size and metric."""
    directory = Path(directory)
    k = index + 1
    p_draws = directory / f"draws_chain{k}.csv"
    p_unc = directory / f"unconstrained_chain{k}.csv"
    p_meta = directory / f"chain{k}.json"
    with p_draws.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(chain.names) + list(SAMPLER_COLUMNS))
        for i in range(chain.draws.shape[0]):
            w.writerow([repr(float(v)) for v in chain.draws[i]]
                       + [repr(float(chain.logp[i])), repr(float(chain.accept_stat[i])),
                          str(int(chain.n_leapfrog[i])), str(int(chain.divergent[i]))])
    with p_unc.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"z[{j + 1}]" for j in range(chain.unconstrained.shape[1])])
        for row in chain.unconstrained:
            w.writerow([repr(float(v)) for v in row])
    write_json(p_meta, {"chain": chain.chain, "step_size": chain.step_size,
                        "inv_metric": [float(v) for v in chain.inv_metric],
                        "warmup_divergences": chain.warmup_divergences})
    return [p_draws, p_unc, p_meta]


def _read_matrix(path):
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) for c in r] for r in reader if r]
    return header, (np.array(rows, dtype=float) if rows else np.empty((0, len(header))))


def load_chain(directory, index: int) -> ChainDraws:
    directory = Path(directory)
    k = index + 1
    header, mat = _read_matrix(directory / f"draws_chain{k}.csv")
    n_par = len(header) - len(SAMPLER_COLUMNS)
    if header[n_par:] != list(SAMPLER_COLUMNS):
        raise DomainError(f"draws_chain{k}.csv: unexpected sampler columns")
    _, unc = _read_matrix(directory / f"unconstrained_chain{k}.csv")
    meta = read_json(directory / f"chain{k}.json")
    return ChainDraws(
        draws=mat[:, :n_par],
        unconstrained=unc,
        logp=mat[:, n_par],
        accept_stat=mat[:, n_par + 1],
        n_leapfrog=mat[:, n_par + 2].astype(np.int64),
        divergent=mat[:, n_par + 3].astype(bool),
        step_size=float(meta["step_size"]),
        inv_metric=np.asarray(meta["inv_metric"], dtype=float),
        names=header[:n_par],
        warmup_divergences=int(meta["warmup_divergences"]),
        chain=int(meta["chain"]),
    )


def load_chains(directory) -> list:
    directory = Path(directory)
    n = len(list(directory.glob("draws_chain*.csv")))
    if n == 0:
        raise DomainError(f"{directory}: no draw files found")
    return [load_chain(directory, k) for k in range(n)]


# ---------------------------------------------------------------------------
# JSON and CSV tables


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def write_json(path, obj) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default, allow_nan=True)
        fh.write("\n")


def read_json(path):
    with Path(path).open(encoding="utf-8") as fh:
        return json.load(fh)


def write_table(path, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


# ---------------------------------------------------------------------------
# output directories


@contextmanager
def staged_output(out_dir):
    """Yield a scratch directory; its files move into ``out_dir`` only on success.

    On any exception the scratch directory is removed and ``out_dir`` is left
    as it was.
    """
    out_dir = Path(out_dir)
    parent = out_dir.parent if out_dir.parent != Path("") else Path(".")
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.", dir=parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for p in sorted(tmp.rglob("*")):
            rel = p.relative_to(tmp)
            if p.is_dir():
                (out_dir / rel).mkdir(parents=True, exist_ok=True)
            else:
                os.replace(p, out_dir / rel)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)
