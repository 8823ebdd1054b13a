"""CSV interchange for sub-model predictions, labels and combined outputs.

Every sub-model lives in its own file ``sample_id,<class_0>,...`` so that
adding a sub-model after training means adding a file. Samples are aligned
by sorted id, never by row position.
"""
import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AnyConsistencyError, DataFormatError, ShapeError

log = logging.getLogger(__name__)


@dataclass
class PredictionTensor:
    """``(samples, sub_models, classes)`` probabilities with their labels."""

    values: np.ndarray
    sample_ids: list
    sub_model_ids: list
    class_names: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        s, n, c = self.values.shape
        if (len(self.sample_ids), len(self.sub_model_ids), len(self.class_names)) != (s, n, c):
            raise ShapeError("id lists do not match the tensor shape", self.values.shape,
                             (len(self.sample_ids), len(self.sub_model_ids), len(self.class_names)))
        if len(set(self.sub_model_ids)) != n:
            raise ValueError("sub-model ids must be unique")
        if n and not ((self.values >= 0) & (self.values <= 1)).all():
            raise ValueError("predictions must lie in [0, 1]")

    @property
    def shape(self):
        return self.values.shape

    @property
    def num_sub_models(self):
        return self.values.shape[1]

    def select(self, indices):
        """Sub-tensor keeping the listed sub-models, in the given order."""
        indices = list(indices)
        return PredictionTensor(self.values[:, indices, :], list(self.sample_ids),
                                [self.sub_model_ids[i] for i in indices], list(self.class_names))

    def take_samples(self, rows):
        rows = np.asarray(rows, dtype=np.intp)
        return PredictionTensor(self.values[rows], [self.sample_ids[i] for i in rows],
                                list(self.sub_model_ids), list(self.class_names))


@dataclass
class LabelMatrix:
    """Binary ground truth aligned with a :class:`PredictionTensor`."""

    values: np.ndarray
    sample_ids: list
    class_names: list

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.sample_ids), len(self.class_names)):
            raise ShapeError("label shape does not match ids", self.values.shape,
                             (len(self.sample_ids), len(self.class_names)))
        if not np.isin(self.values, (0.0, 1.0)).all():
            raise ValueError("labels must be 0 or 1")

    @property
    def any_index(self):
        lowered = [c.lower() for c in self.class_names]
        return lowered.index("any") if "any" in lowered else None

    def any_violations(self):
        """Sample ids whose "any" label differs from the max over sub-types."""
        ai = self.any_index
        if ai is None or len(self.class_names) < 2:
            return []
        sub = np.delete(self.values, ai, axis=1).max(axis=1)
        bad = np.flatnonzero(sub != self.values[:, ai])
        return [self.sample_ids[i] for i in bad]

    def take_samples(self, rows):
        rows = np.asarray(rows, dtype=np.intp)
        return LabelMatrix(self.values[rows], [self.sample_ids[i] for i in rows], list(self.class_names))


def _fmt(x):
    return repr(float(x))


def _read_table(path):
    """Read ``sample_id,<classes>`` rows -> (classes, {id: (line, [str])})."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot open: {exc.strerror}", path=path) from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "sample_id" or len(header) < 2:
            raise DataFormatError("header must be sample_id,<class_0>,...", path=path, line=1)
        classes = header[1:]
        rows = {}
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"expected {len(header)} fields, found {len(row)}",
                                      path=path, line=line)
            sid = row[0]
            if sid in rows:
                raise DataFormatError(f"duplicate sample_id {sid!r}", path=path, line=line)
            rows[sid] = (line, row[1:])
    return classes, rows


def _parse_float(text, path, line, column):
    try:
        value = float(text)
    except ValueError:
        raise DataFormatError(f"not a number: {text!r}", path=path, line=line, column=column) from None
    return value


def load_prediction_file(path):
    """One sub-model's predictions -> (sorted sample ids, classes, ``(S, C)`` array)."""
    classes, rows = _read_table(path)
    ids = sorted(rows)
    out = np.empty((len(ids), len(classes)))
    for i, sid in enumerate(ids):
        line, fields = rows[sid]
        for j, text in enumerate(fields):
            v = _parse_float(text, path, line, classes[j])
            if not 0.0 <= v <= 1.0:
                raise DataFormatError(f"probability {v!r} outside [0, 1]", path=path, line=line,
                                      column=classes[j])
            out[i, j] = v
    return ids, classes, out


def load_predictions(paths, sub_model_ids=None):
    """Assemble per-sub-model CSV files into a :class:`PredictionTensor`.

    Sub-model order follows ``paths``; ids default to the file stems.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise ValueError("no prediction files given")
    if sub_model_ids is None:
        sub_model_ids = [p.stem for p in paths]
    if len(set(sub_model_ids)) != len(sub_model_ids):
        raise ValueError("duplicate sub-model ids: " + ", ".join(
            sorted({i for i in sub_model_ids if sub_model_ids.count(i) > 1})))
    ref_ids = ref_classes = None
    columns = []
    for path in paths:
        ids, classes, arr = load_prediction_file(path)
        if ref_ids is None:
            ref_ids, ref_classes, ref_path = ids, classes, path
        else:
            if classes != ref_classes:
                raise DataFormatError(f"class header {classes} differs from {ref_path} ({ref_classes})",
                                      path=path, line=1)
            if ids != ref_ids:
                missing = sorted(set(ref_ids) - set(ids))
                extra = sorted(set(ids) - set(ref_ids))
                parts = []
                if missing:
                    parts.append(f"missing samples {missing[:5]}")
                if extra:
                    parts.append(f"unexpected samples {extra[:5]}")
                raise DataFormatError("sample set differs from " + str(ref_path) + ": " + "; ".join(parts),
                                      path=path)
        columns.append(arr)
    return PredictionTensor(np.stack(columns, axis=1), ref_ids, list(sub_model_ids), ref_classes)


def save_predictions(tensor, directory):
    """Write one ``<sub_model_id>.csv`` per sub-model; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for j, mid in enumerate(tensor.sub_model_ids):
        path = directory / f"{mid}.csv"
        save_matrix(path, tensor.values[:, j, :], tensor.sample_ids, tensor.class_names)
        paths.append(path)
    return paths


def save_matrix(path, values, sample_ids, class_names):
    """Write a ``sample_id,<classes>`` table (predictions, labels, outputs)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *class_names])
        for sid, row in zip(sample_ids, values):
            w.writerow([sid, *(_fmt(v) for v in row)])


def append_sub_models(tensor, more):
    """Concatenate ``more`` onto ``tensor`` along the sub-model axis."""
    if more.num_sub_models == 0:
        return tensor
    if list(more.sample_ids) != list(tensor.sample_ids):
        raise ValueError("sample sets differ; cannot append sub-models")
    if list(more.class_names) != list(tensor.class_names):
        raise ValueError(f"class names differ: {tensor.class_names} vs {more.class_names}")
    dup = set(tensor.sub_model_ids) & set(more.sub_model_ids)
    if dup:
        raise ValueError(f"duplicate sub-model ids: {sorted(dup)}")
    return PredictionTensor(np.concatenate([tensor.values, more.values], axis=1),
                            list(tensor.sample_ids), tensor.sub_model_ids + more.sub_model_ids,
                            list(tensor.class_names))


def load_labels(path, on_any_violation="warn"):
    """Read a binary label CSV and check the "any" column.

    ``on_any_violation`` is ``"warn"`` (log and continue), ``"fail"`` (raise
    :class:`AnyConsistencyError`) or ``"ignore"``.
    """
    if on_any_violation not in ("warn", "fail", "ignore"):
        raise ValueError("on_any_violation must be warn, fail or ignore")
    classes, rows = _read_table(path)
    ids = sorted(rows)
    out = np.empty((len(ids), len(classes)))
    for i, sid in enumerate(ids):
        line, fields = rows[sid]
        for j, text in enumerate(fields):
            v = _parse_float(text, path, line, classes[j])
            if v not in (0.0, 1.0):
                raise DataFormatError(f"label must be 0 or 1, found {text!r}", path=path, line=line,
                                      column=classes[j])
            out[i, j] = v
    labels = LabelMatrix(out, ids, classes)
    bad = labels.any_violations()
    if bad and on_any_violation != "ignore":
        msg = f"'any' label inconsistent with sub-types for {len(bad)} samples: {bad[:10]}"
        if on_any_violation == "fail":
            raise AnyConsistencyError(msg, bad, path=path)
        log.warning("%s: %s", path, msg)
    return labels


def save_labels(labels, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *labels.class_names])
        for sid, row in zip(labels.sample_ids, labels.values):
            w.writerow([sid, *(str(int(v)) for v in row)])


def align(tensor, labels):
    """Check predictions and labels refer to the same samples and classes."""
    if list(tensor.sample_ids) != list(labels.sample_ids):
        missing = sorted(set(tensor.sample_ids) ^ set(labels.sample_ids))
        raise ValueError(f"prediction and label sample ids differ (e.g. {missing[:5]})")
    if list(tensor.class_names) != list(labels.class_names):
        raise ValueError(f"class names differ: {tensor.class_names} vs {labels.class_names}")


def parse_index_list(text, upper=None):
    """Parse ``"0..9,12,15..16"`` (inclusive ranges) into a list of ints."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = part.split("..", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if upper is not None:
        bad = [i for i in out if not 0 <= i < upper]
        if bad:
            raise ValueError(f"sub-model indices out of range [0, {upper}): {bad}")
    return out
