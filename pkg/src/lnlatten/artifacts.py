"""Plain-text inspection artifacts: CSV and heatmap writers with matching readers.

Everything here is meant to be diffed, plotted, and re-read by the tool
itself; all writes are atomic (temp file then rename).
"""

import csv
import io
import os

import numpy as np

from .errors import DataError


def atomic_write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(text)
    os.replace(tmp, path)


def _fmt(x):
    return repr(float(x))


# -- train record ------------------------------------------------------------

def write_record_csv(path, record):
    """One row per iteration: iter, loss_entropy, loss_l2, acc, wg_1..wg_M."""
    buf = io.StringIO()
    w = csv.writer(buf)
    m = record.m
    w.writerow(["iter", "loss_entropy", "loss_l2", "acc"]
               + [f"wg_{i + 1}" for i in range(m)])
    for it in record.iterations:
        w.writerow([it["iter"], _fmt(it["loss_entropy"]), _fmt(it["loss_l2"]),
                    _fmt(it["acc"])] + [_fmt(v) for v in it["wg"]])
    atomic_write_text(path, buf.getvalue())


def read_record_csv(path):
    """Returns dict of numpy columns: iter, loss_entropy, loss_l2, acc, wg."""
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][:4] != ["iter", "loss_entropy", "loss_l2", "acc"]:
        raise DataError(f"{path!r} is not a train-record CSV")
    body = rows[1:]
    return {
        "iter": np.array([int(r[0]) for r in body]),
        "loss_entropy": np.array([float(r[1]) for r in body]),
        "loss_l2": np.array([float(r[2]) for r in body]),
        "acc": np.array([float(r[3]) for r in body]),
        "wg": np.array([[float(v) for v in r[4:]] for r in body]),
    }


# -- confusion matrix --------------------------------------------------------

def write_confusion_csv(path, confusion):
    buf = io.StringIO()
    w = csv.writer(buf)
    for row in np.asarray(confusion):
        w.writerow([int(v) for v in row])
    atomic_write_text(path, buf.getvalue())


def read_confusion_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    try:
        mat = np.array([[int(v) for v in r] for r in rows], dtype=np.int64)
    except ValueError as e:
        raise DataError(f"{path!r} is not a confusion-matrix CSV") from e
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise DataError(f"confusion matrix in {path!r} is not square")
    return mat


# -- weight heatmaps (n x n text grids) --------------------------------------

def write_heatmap(path, wg):
    """Write an M-vector as an n x n grid of space-separated decimals."""
    wg = np.asarray(wg, dtype=np.float64)
    n = int(round(np.sqrt(wg.size)))
    if n * n != wg.size:
        raise DataError(f"heatmap needs a square region count, got {wg.size}")
    grid = wg.reshape(n, n)
    lines = [" ".join(f"{v:.8f}" for v in row) for row in grid]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_heatmap(path):
    with open(path, encoding="utf-8") as f:
        rows = [line.split() for line in f if line.strip()]
    try:
        grid = np.array([[float(v) for v in r] for r in rows])
    except ValueError as e:
        raise DataError(f"{path!r} is not a heatmap grid") from e
    if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:
        raise DataError(f"heatmap in {path!r} is not square")
    return grid


# -- gate vectors ------------------------------------------------------------

def write_gates_csv(path, columns):
    """columns: ordered dict-like of name -> length-M vector."""
    names = list(columns)
    vecs = [np.asarray(columns[k]).reshape(-1) for k in names]
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["patch"] + names)
    for i in range(len(vecs[0])):
        w.writerow([i] + [_fmt(v[i]) for v in vecs])
    atomic_write_text(path, buf.getvalue())


def read_gates_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "patch":
        raise DataError(f"{path!r} is not a gate CSV")
    names = rows[0][1:]
    body = rows[1:]
    return {name: np.array([float(r[j + 1]) for r in body])
            for j, name in enumerate(names)}


# -- sweep tables ------------------------------------------------------------

def write_sweep_csv(path, rows):
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["parameter", "value", "status", "accuracy", "reason"])
    for r in rows:
        acc = r["accuracy"]
        w.writerow([r["parameter"], r["value"], r["status"],
                    _fmt(acc) if acc != "" else "", r["reason"]])
    atomic_write_text(path, buf.getvalue())


def read_sweep_csv(path):
    with open(path, encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "parameter":
        raise DataError(f"{path!r} is not a sweep CSV")
    out = []
    for r in rows[1:]:
        out.append({"parameter": r[0], "value": r[1], "status": r[2],
                    "accuracy": float(r[3]) if r[3] else "", "reason": r[4]})
    return out
