"""File formats for the command-line tool.

Input side: a dense CSV matrix (comma-separated, one sample per row,
optional header) or a sparse coordinate text matrix (header line
``rows cols nnz``, then 1-based ``i j value`` triplets), plus a labels
file with one class label per line, mapped to consecutive codes in
first-appearance order.  Malformed input raises ``ValueError`` naming the
file and line.

Output side: line-delimited records.  Every line is space-separated
``key:value`` tokens opening with ``record:<type>``; values never contain
spaces (floats are written with ``repr`` so equal runs produce equal
bytes, class labels are percent-encoded).  ``read_records`` parses any
such file back; ``read_fit_file`` additionally rebuilds the coefficient
path so predictions can be reproduced away from the fitting process.
"""

from __future__ import annotations

import urllib.parse

import numpy as np
import scipy.sparse as sp

__all__ = [
    "read_dense_csv",
    "read_sparse_coo",
    "read_labels",
    "load_dataset",
    "write_record",
    "read_records",
    "write_fit_file",
    "read_fit_file",
    "write_cv_file",
    "write_sim_file",
    "FitRecords",
]

MATRIX_FORMATS = ("csv", "coo")


def _bad(path, lineno, message):
    return ValueError("%s, line %d: %s" % (path, lineno, message))


def _data_lines(path):
    """Significant lines with their 1-based numbers; blank lines skipped."""
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if stripped:
                out.append((lineno, stripped))
    return out


def read_dense_csv(path):
    """Dense comma-separated matrix, one sample per row.

    A first line whose fields are not all numeric is treated as a header
    and skipped.  Ragged rows are an error naming the line.
    """
    lines = _data_lines(path)
    if not lines:
        raise ValueError("%s: no rows found" % path)

    def try_row(text):
        fields = text.split(",")
        try:
            return [float(tok) for tok in fields]
        except ValueError:
            return None

    first = try_row(lines[0][1])
    data = lines if first is not None else lines[1:]
    if not data:
        raise ValueError("%s: no data rows after the header" % path)
    rows = []
    width = None
    for lineno, text in data:
        row = try_row(text)
        if row is None:
            raise _bad(path, lineno, "non-numeric field in row %r" % text)
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise _bad(path, lineno, "expected %d fields, got %d" % (width, len(row)))
        rows.append(row)
    return np.asarray(rows, dtype=float)


def read_sparse_coo(path):
    """Sparse coordinate text: ``rows cols nnz`` header, 1-based triplets.

    Duplicate coordinates sum.  Returns a CSC matrix.
    """
    lines = _data_lines(path)
    if not lines:
        raise ValueError("%s: empty file" % path)
    lineno, header = lines[0]
    parts = header.split()
    if len(parts) != 3:
        raise _bad(path, lineno, "header must be 'rows cols nnz', got %r" % header)
    try:
        n_rows, n_cols, nnz = (int(tok) for tok in parts)
    except ValueError:
        raise _bad(path, lineno, "non-integer header field in %r" % header) from None
    if n_rows < 1 or n_cols < 1 or nnz < 0:
        raise _bad(path, lineno, "header values out of range: %r" % header)
    body = lines[1:]
    if len(body) != nnz:
        raise ValueError(
            "%s: header promises %d entries but the file has %d" % (path, nnz, len(body))
        )
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=float)
    for k, (lineno, text) in enumerate(body):
        parts = text.split()
        if len(parts) != 3:
            raise _bad(path, lineno, "expected 'i j value', got %r" % text)
        try:
            i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
        except ValueError:
            raise _bad(path, lineno, "malformed triplet %r" % text) from None
        if not (1 <= i <= n_rows and 1 <= j <= n_cols):
            raise _bad(
                path,
                lineno,
                "index (%d, %d) outside the declared %d x %d shape"
                % (i, j, n_rows, n_cols),
            )
        rows[k], cols[k], vals[k] = i - 1, j - 1, v
    mat = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
    return mat.tocsc()


def read_labels(path):
    """One class label per line; codes follow first-appearance order.

    Returns ``(codes, names)`` with integer codes 0..K-1.  Interior blank
    lines are errors; trailing blank lines are ignored.
    """
    with open(path, "r", encoding="utf-8") as f:
        raw = [line.rstrip("\n").strip() for line in f]
    while raw and raw[-1] == "":
        raw.pop()
    if not raw:
        raise ValueError("%s: no labels found" % path)
    names = []
    seen = {}
    codes = np.empty(len(raw), dtype=np.int64)
    for lineno, label in enumerate(raw, start=1):
        if label == "":
            raise _bad(path, lineno, "empty label")
        if label not in seen:
            seen[label] = len(names)
            names.append(label)
        codes[lineno - 1] = seen[label]
    return codes, names


def load_dataset(matrix_path, labels_path, fmt):
    """Matrix plus labels, checked for consistent sample counts."""
    if fmt not in MATRIX_FORMATS:
        raise ValueError(
            "unknown matrix format %r; expected one of %s"
            % (fmt, ", ".join(repr(x) for x in MATRIX_FORMATS))
        )
    X = read_dense_csv(matrix_path) if fmt == "csv" else read_sparse_coo(matrix_path)
    codes, names = read_labels(labels_path)
    if codes.size != X.shape[0]:
        raise ValueError(
            "labels file %s has %d entries but the matrix has %d rows"
            % (labels_path, codes.size, X.shape[0])
        )
    return X, codes, names


# ---------------------------------------------------------------------------
# record-per-line output


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def encode_label(label):
    return urllib.parse.quote(str(label), safe="")


def decode_label(token):
    return urllib.parse.unquote(token)


def write_record(f, rtype, items):
    """One ``record:<type>`` line from (key, value) pairs, order preserved."""
    tokens = ["record:%s" % rtype]
    for key, value in items:
        key = str(key)
        if ":" in key or " " in key:
            raise ValueError("record key %r may not contain ':' or spaces" % key)
        text = _fmt(value)
        if " " in text:
            raise ValueError("value for %r contains a space: %r" % (key, text))
        tokens.append("%s:%s" % (key, text))
    f.write(" ".join(tokens) + "\n")


def read_records(path):
    """Parse a record-per-line file into ``(type, {key: value})`` pairs."""
    out = []
    for lineno, line in _data_lines(path):
        tokens = line.split()
        fields = {}
        order = []
        for token in tokens:
            key, sep, value = token.partition(":")
            if not sep:
                raise _bad(path, lineno, "token %r is not key:value" % token)
            fields[key] = value
            order.append(key)
        if not order or order[0] != "record":
            raise _bad(path, lineno, "line does not start with a record tag")
        rtype = fields.pop("record")
        out.append((rtype, fields))
    return out


def _join_floats(values):
    return ",".join(repr(float(v)) for v in values)


def _split_floats(text):
    return np.array([float(tok) for tok in text.split(",")] if text else [])


def write_fit_file(f, path, classes, config_items):
    """Line-delimited fit output.

    One ``path`` record per penalty level carrying the scalar diagnostics,
    the intercept vector, and the nonzero coefficients as 1-based
    ``block,class,value`` triplets (feature blocks only; the intercept has
    its own field).
    """
    K = len(classes)
    flat = path.feature_flat(0)
    p = flat.size // K
    write_record(f, "header", [("format", "sparsegroup-fit"), ("version", 1)])
    write_record(
        f,
        "config",
        list(config_items) + [("n_classes", K), ("n_features", p), ("n_lambda", path.n_lambda)],
    )
    write_record(f, "classes", [("labels", ",".join(encode_label(c) for c in classes))])
    for i in range(path.n_lambda):
        coef = path.feature_flat(i).reshape(p, K)
        b0 = path.intercept(i)
        triplets = []
        for j, k in zip(*np.nonzero(coef)):
            triplets.append("%d,%d,%s" % (j + 1, k + 1, repr(float(coef[j, k]))))
        write_record(
            f,
            "path",
            [
                ("index", i),
                ("lambda", float(path.lambdas[i])),
                ("objective", float(path.objective[i])),
                ("kkt_residual", float(path.kkt[i])),
                ("status", path.statuses[i]),
                ("theta_hat", int(path.theta[i])),
                ("pi_hat", int(path.pi[i])),
                ("intercept", _join_floats(b0) if b0 is not None else ""),
                ("nonzero", ";".join(triplets)),
            ],
        )


class FitRecords:
    """Fit output re-read into arrays: enough to reproduce predictions."""

    def __init__(self, config, classes, lambdas, intercepts, coefs, theta, pi):
        self.config = config
        self.classes = classes
        self.lambdas = lambdas
        self.intercepts = intercepts
        self.coefs = coefs
        self.theta = theta
        self.pi = pi

    @property
    def n_lambda(self):
        return int(self.lambdas.size)

    def scores(self, X, i):
        return np.asarray(X @ self.coefs[i].T) + self.intercepts[i]

    def predict(self, X, i):
        picks = np.argmax(self.scores(X, i), axis=1)
        return [self.classes[k] for k in picks]


def read_fit_file(path):
    records = read_records(path)
    config = {}
    classes = None
    rows = []
    for rtype, fields in records:
        if rtype == "config":
            config = fields
        elif rtype == "classes":
            classes = [decode_label(tok) for tok in fields["labels"].split(",")]
        elif rtype == "path":
            rows.append(fields)
    if classes is None or "n_features" not in config:
        raise ValueError("%s: missing classes or config record" % path)
    K = len(classes)
    p = int(config["n_features"])
    d = len(rows)
    lambdas = np.empty(d)
    intercepts = np.zeros((d, K))
    coefs = np.zeros((d, K, p))
    theta = np.empty(d, dtype=int)
    pi = np.empty(d, dtype=int)
    for i, fields in enumerate(rows):
        idx = int(fields["index"])
        lambdas[idx] = float(fields["lambda"])
        theta[idx] = int(fields["theta_hat"])
        pi[idx] = int(fields["pi_hat"])
        if fields["intercept"]:
            intercepts[idx] = _split_floats(fields["intercept"])
        if fields["nonzero"]:
            for triplet in fields["nonzero"].split(";"):
                j, k, v = triplet.split(",")
                coefs[idx, int(k) - 1, int(j) - 1] = float(v)
    return FitRecords(config, classes, lambdas, intercepts, coefs, theta, pi)


def write_cv_file(f, result, classes, majority_error, config_items):
    """Cross-validation table.

    Per alpha: a ``baseline`` record at the top of the grid carrying the
    analytic majority-class error, one ``cv`` record per penalty level with
    the pooled error triple and a subsequence membership flag, and a
    ``selected`` record naming the chosen level.
    """
    write_record(f, "header", [("format", "sparsegroup-cv"), ("version", 1)])
    write_record(f, "config", list(config_items))
    write_record(f, "classes", [("labels", ",".join(encode_label(c) for c in classes))])
    for entry in result.per_alpha:
        subseq = set(int(i) for i in entry.subsequence_idx)
        write_record(
            f,
            "baseline",
            [
                ("alpha", entry.alpha),
                ("lambda", float(entry.lambdas[0])),
                ("majority_error", float(majority_error)),
            ],
        )
        for i in range(entry.lambdas.size):
            write_record(
                f,
                "cv",
                [
                    ("alpha", entry.alpha),
                    ("index", i),
                    ("lambda", float(entry.lambdas[i])),
                    ("err", float(entry.err[i])),
                    ("se", float(entry.se[i])),
                    ("theta_hat", int(entry.theta[i])),
                    ("pi_hat", int(entry.pi[i])),
                    ("subsequence", i in subseq),
                ],
            )
        write_record(
            f,
            "selected",
            [
                ("alpha", entry.alpha),
                ("index", int(entry.best_index)),
                ("lambda_hat", float(entry.lambda_hat)),
            ],
        )


def write_sim_file(f, result, config_items):
    """Simulation table: one row per (replicate, alpha), then aggregates."""
    write_record(f, "header", [("format", "sparsegroup-sim"), ("version", 1)])
    write_record(f, "config", list(config_items))
    for row in result.rows:
        write_record(
            f,
            "sim",
            [
                ("replicate", row.replicate),
                ("alpha", row.alpha),
                ("test_error", row.test_error),
                ("excess_error", row.excess_error),
                ("tpr", row.tpr),
                ("ppv", row.ppv),
                ("bayes_rate", row.bayes_rate),
                ("lambda_hat", row.lambda_hat),
            ],
        )
    for s in result.aggregate():
        write_record(
            f,
            "summary",
            [
                ("alpha", s.alpha),
                ("n", s.n),
                ("excess_mean", s.excess_mean),
                ("excess_se", s.excess_se),
                ("excess_lo", s.excess_band[0]),
                ("excess_hi", s.excess_band[1]),
                ("tpr_mean", s.tpr_mean),
                ("tpr_se", s.tpr_se),
                ("ppv_mean", s.ppv_mean),
                ("ppv_se", s.ppv_se),
            ],
        )
    write_record(f, "failures", [("count", result.failures)])
