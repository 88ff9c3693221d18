"""File formats: cohort CSVs, checkpoints, reports, traces and sweep grids.

Matrices are ``<subject_id>.csv`` files with M rows of M comma-separated
decimals and no header; scores live in one CSV with header
``subject_id,score``.  Structured outputs are JSON.  Floats are written with
17 significant digits so everything round-trips exactly.  All writes go to a
temporary file in the target directory and are renamed into place.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .model import (CohortDataset, DataError, FactorModel, HyperParams,
                    deflate_first_eigenvector, validate_dataset)
from .predictor import PredictionReport, SubjectRow

FORMAT_VERSION = "1"


def fmt(x: float) -> str:
    return repr(float(x)) if math.isfinite(x) else ("nan" if math.isnan(x) else repr(float(x)))


def atomic_write(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(path, obj):
    atomic_write(path, json.dumps(obj, indent=2, allow_nan=True) + "\n")


def _csv_text(rows, header=None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header:
        writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# -- cohorts -----------------------------------------------------------------

def write_matrix(path, matrix: np.ndarray):
    atomic_write(path, _csv_text([[fmt(v) for v in row] for row in matrix]))


def read_matrix(path) -> np.ndarray:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        for r, line in enumerate(csv.reader(fh), start=1):
            if not line:
                continue
            vals = []
            for c, tok in enumerate(line, start=1):
                try:
                    vals.append(float(tok))
                except ValueError:
                    raise DataError(f"{path.name}: row {r}, column {c}: cannot parse {tok!r}") from None
            rows.append(vals)
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise DataError(f"{path.name}: ragged or empty matrix")
    return np.array(rows)


def write_cohort(data: CohortDataset, matrix_dir, scores_file):
    matrix_dir = Path(matrix_dir)
    ids = data.subject_ids or [f"s{n:04d}" for n in range(data.subject_count)]
    for sid, g in zip(ids, data.gammas):
        write_matrix(matrix_dir / f"{sid}.csv", g)
    atomic_write(scores_file, _csv_text([[sid, fmt(s)] for sid, s in zip(ids, data.scores)],
                                        header=["subject_id", "score"]))


def read_scores(scores_file) -> dict:
    scores = {}
    with open(scores_file, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "score"]:
            raise DataError(f"{Path(scores_file).name}: header must be 'subject_id,score'")
        for r, line in enumerate(reader, start=2):
            if not line:
                continue
            if len(line) != 2:
                raise DataError(f"{Path(scores_file).name}: row {r}: expected 2 fields")
            try:
                scores[line[0]] = float(line[1])
            except ValueError:
                raise DataError(f"{Path(scores_file).name}: row {r}, column 2: "
                                f"cannot parse {line[1]!r}") from None
    return scores


def load_cohort(matrix_dir, scores_file, deflate: bool = False,
                require_scores: bool = True) -> CohortDataset:
    """Read one matrix file per subject plus the scores file.

    Subjects are ordered by sorted id.  Every scored subject needs a matrix;
    with ``require_scores=False`` unscored matrices are loaded with NaN
    scores (prediction inputs).
    """
    matrix_dir = Path(matrix_dir)
    files = {p.stem: p for p in matrix_dir.glob("*.csv")}
    scores = read_scores(scores_file) if scores_file is not None else {}
    missing = sorted(set(scores) - set(files))
    if missing:
        raise DataError(f"missing matrix file for subject {missing[0]}")
    if require_scores:
        ids = sorted(scores)
    else:
        ids = sorted(files)
    if not ids:
        raise DataError("no subjects found")
    mats = []
    for sid in ids:
        m = read_matrix(files[sid])
        if mats and m.shape != mats[0].shape:
            raise DataError(f"{sid}.csv: shape {m.shape} differs from {mats[0].shape}")
        mats.append(m)
    if mats[0].shape[0] != mats[0].shape[1]:
        raise DataError(f"non-square matrix in {ids[0]}.csv")
    y = np.array([scores.get(sid, np.nan) for sid in ids])
    raw = CohortDataset(np.stack(mats), np.zeros(len(ids)) if not require_scores else y, ids)
    data = validate_dataset(raw)
    if not require_scores:
        data.scores = y
    if deflate:
        data.gammas = np.stack([deflate_first_eigenvector(g) for g in data.gammas])
    return data


# -- checkpoints -------------------------------------------------------------

def _floats(a):
    return np.asarray(a, dtype=float).tolist()


def write_checkpoint(path, model: FactorModel, hp: HyperParams, iteration: int):
    dump_json(path, {
        "format_version": FORMAT_VERSION,
        "hyperparams": asdict(hp),
        "seed": hp.rng_seed,
        "iteration": int(iteration),
        "basis": _floats(model.basis),
        "coeffs": _floats(model.coeffs),
        "weights": _floats(model.weights),
    })


def read_checkpoint(path):
    """Returns ``(model, hyperparams, iteration)``."""
    with open(path) as fh:
        obj = json.load(fh)
    if obj.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported checkpoint version {obj.get('format_version')!r}")
    K = len(obj["weights"])
    B = np.array(obj["basis"], dtype=float).reshape(-1, K)
    C = np.array(obj["coeffs"], dtype=float).reshape(K, -1)
    model = FactorModel(B, C, np.array(obj["weights"], dtype=float))
    return model, HyperParams(**obj["hyperparams"]), obj["iteration"]


# -- reports -----------------------------------------------------------------

SUBJECT_FIELDS = [f.name for f in fields(SubjectRow)]


def report_to_dict(report: PredictionReport) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "meta": dict(report.meta),
        "subjects": [asdict(r) for r in report.rows],
        "aggregates": report.aggregates,
    }


def emit_report(report: PredictionReport, path):
    """Write ``<path>`` (JSON) plus per-subject and plot-data CSVs.

    ``<stem>_plot.csv`` holds one ``true,predicted,split`` row per held-out
    prediction, so a pooled cross-validation report gives exactly N rows.
    Training predictions (one per subject per fold they trained in) go to
    ``<stem>_plot_train.csv``.
    """
    if not report.rows:
        raise ValueError("refusing to write a report without subjects")
    path = Path(path)
    dump_json(path, report_to_dict(report))
    atomic_write(path.with_name(path.stem + "_subjects.csv"), _csv_text(
        [[r.subject, r.fold, r.split, fmt(r.true), fmt(r.pred)] for r in report.rows],
        header=SUBJECT_FIELDS))
    test = [r for r in report.rows if r.split == "test"]
    atomic_write(path.with_name(path.stem + "_plot.csv"), _csv_text(
        [[fmt(r.true), fmt(r.pred), r.split] for r in test],
        header=["true", "predicted", "split"]))
    atomic_write(path.with_name(path.stem + "_plot_train.csv"), _csv_text(
        [[fmt(r.true), fmt(r.pred), r.split] for r in report.rows if r.split == "train"],
        header=["true", "predicted", "split"]))


def read_report(path) -> PredictionReport:
    with open(path) as fh:
        obj = json.load(fh)
    return PredictionReport([SubjectRow(**s) for s in obj["subjects"]], obj["meta"])


def write_trace_csv(path, trace):
    cols = ["iteration", "augmented", "objective", "residual", "l1_basis", "eta"]
    rows = []
    for rec in trace.records:
        after = list(rec.after_steps) + [float("nan")] * (3 - len(rec.after_steps))
        rows.append([rec.iteration] + [fmt(getattr(rec, c)) for c in cols[1:]]
                    + [int(rec.step1_increase)] + [fmt(v) for v in after])
    header = cols + ["step1_increase", "after_step1", "after_step2", "after_step3"]
    atomic_write(path, _csv_text(rows, header=header))


def write_sweep(out_dir, result):
    """Long-format grid CSV (one row per cell) and a JSON summary."""
    out_dir = Path(out_dir)
    rows = []
    mean, std, failed = result.mean, result.std, result.failed
    for i, noise in enumerate(result.noise_levels):
        for j, sp in enumerate(result.sparsity_levels):
            rows.append([fmt(noise), fmt(sp), fmt(mean[i, j]), fmt(std[i, j]),
                         result.similarities.shape[2], int(failed[i, j])])
    atomic_write(out_dir / "sweep_grid.csv", _csv_text(
        rows, header=["noise", "sparsity", "mean_similarity", "std_similarity", "trials", "failed"]))
    dump_json(out_dir / "sweep_summary.json", {
        "format_version": FORMAT_VERSION,
        "noise_levels": _floats(result.noise_levels),
        "sparsity_levels": _floats(result.sparsity_levels),
        "mean": _floats(mean),
        "std": _floats(std),
        "similarities": _floats(result.similarities),
    })
