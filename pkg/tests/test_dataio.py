"""File format contracts: ingest errors carry line numbers, output round-trips."""

import io

import numpy as np
import pytest

from sparsegroup.blocks import PenaltySpec
from sparsegroup.dataio import (
    load_dataset,
    read_dense_csv,
    read_fit_file,
    read_labels,
    read_records,
    read_sparse_coo,
    write_cv_file,
    write_fit_file,
    write_record,
    write_sim_file,
)
from sparsegroup.losses import MultinomialLoss
from sparsegroup.model_selection import cross_validate, predict_labels
from sparsegroup.simulate import SimConfig, SimResult, SimRow
from sparsegroup.solver import SolverConfig, fit_path


def _write(tmp_path, name, text):
    target = tmp_path / name
    target.write_text(text, encoding="utf-8")
    return str(target)


# ---------------------------------------------------------------------------
# dense CSV


def test_csv_two_by_two(tmp_path):
    path = _write(tmp_path, "m.csv", "1,2\n3,4\n")
    assert np.array_equal(read_dense_csv(path), [[1.0, 2.0], [3.0, 4.0]])


def test_csv_header_skipped(tmp_path):
    path = _write(tmp_path, "m.csv", "f1,f2\n1,2\n3,4\n")
    assert np.array_equal(read_dense_csv(path), [[1.0, 2.0], [3.0, 4.0]])


def test_csv_ragged_row_names_line(tmp_path):
    path = _write(tmp_path, "m.csv", "1,2\n3\n")
    with pytest.raises(ValueError, match="line 2.*expected 2 fields, got 1"):
        read_dense_csv(path)


def test_csv_non_numeric_mid_file(tmp_path):
    path = _write(tmp_path, "m.csv", "1,2\n3,oops\n")
    with pytest.raises(ValueError, match="line 2.*non-numeric"):
        read_dense_csv(path)


def test_csv_empty_and_header_only(tmp_path):
    with pytest.raises(ValueError, match="no rows"):
        read_dense_csv(_write(tmp_path, "a.csv", "\n\n"))
    with pytest.raises(ValueError, match="no data rows"):
        read_dense_csv(_write(tmp_path, "b.csv", "x,y\n"))


# ---------------------------------------------------------------------------
# sparse coordinate text


def test_coo_single_entry(tmp_path):
    path = _write(tmp_path, "m.txt", "2 3 1\n1 3 5.0\n")
    X = read_sparse_coo(path)
    assert X.shape == (2, 3)
    dense = X.toarray()
    assert dense[0, 2] == 5.0
    assert np.count_nonzero(dense) == 1


def test_coo_duplicates_sum(tmp_path):
    path = _write(tmp_path, "m.txt", "2 2 2\n1 1 2.0\n1 1 3.0\n")
    assert read_sparse_coo(path).toarray()[0, 0] == 5.0


def test_coo_errors_name_lines(tmp_path):
    with pytest.raises(ValueError, match="line 1.*header"):
        read_sparse_coo(_write(tmp_path, "a.txt", "2 3\n"))
    with pytest.raises(ValueError, match="promises 2 entries but the file has 1"):
        read_sparse_coo(_write(tmp_path, "b.txt", "2 2 2\n1 1 1.0\n"))
    with pytest.raises(ValueError, match="line 2.*outside the declared 2 x 3"):
        read_sparse_coo(_write(tmp_path, "c.txt", "2 3 1\n3 1 1.0\n"))
    with pytest.raises(ValueError, match="line 3.*malformed"):
        read_sparse_coo(_write(tmp_path, "d.txt", "2 2 2\n1 1 1.0\n1 x 1.0\n"))
    with pytest.raises(ValueError, match="line 2.*expected 'i j value'"):
        read_sparse_coo(_write(tmp_path, "e.txt", "2 2 1\n1 1\n"))


def test_coo_empty_matrix_allowed(tmp_path):
    X = read_sparse_coo(_write(tmp_path, "m.txt", "3 4 0\n"))
    assert X.shape == (3, 4) and X.nnz == 0


# ---------------------------------------------------------------------------
# labels


def test_labels_first_appearance_order(tmp_path):
    codes, names = read_labels(_write(tmp_path, "y.txt", "b\na\nb\n"))
    assert names == ["b", "a"]
    assert np.array_equal(codes, [0, 1, 0])


def test_labels_blank_line_rules(tmp_path):
    codes, names = read_labels(_write(tmp_path, "ok.txt", "a\nb\n\n\n"))
    assert codes.size == 2
    with pytest.raises(ValueError, match="line 2.*empty label"):
        read_labels(_write(tmp_path, "bad.txt", "a\n\nb\n"))
    with pytest.raises(ValueError, match="no labels"):
        read_labels(_write(tmp_path, "none.txt", ""))


def test_load_dataset_count_mismatch(tmp_path):
    matrix = _write(tmp_path, "m.csv", "1,2\n3,4\n")
    labels = _write(tmp_path, "y.txt", "a\nb\nc\n")
    with pytest.raises(ValueError, match="3 entries but the matrix has 2 rows"):
        load_dataset(matrix, labels, "csv")
    with pytest.raises(ValueError, match="unknown matrix format"):
        load_dataset(matrix, labels, "tsv")
    X, codes, names = load_dataset(matrix, _write(tmp_path, "y2.txt", "a\nb\n"), "csv")
    assert X.shape == (2, 2) and names == ["a", "b"]


# ---------------------------------------------------------------------------
# record lines


def test_record_round_trip(tmp_path):
    buf = io.StringIO()
    write_record(buf, "demo", [("n", 3), ("x", 0.1), ("ok", True), ("name", "abc")])
    path = _write(tmp_path, "r.txt", buf.getvalue())
    records = read_records(path)
    assert records == [("demo", {"n": "3", "x": "0.1", "ok": "true", "name": "abc"})]
    assert float(records[0][1]["x"]) == 0.1


def test_record_rejects_spaces_and_bad_lines(tmp_path):
    buf = io.StringIO()
    with pytest.raises(ValueError, match="may not contain"):
        write_record(buf, "demo", [("bad key", 1)])
    with pytest.raises(ValueError, match="contains a space"):
        write_record(buf, "demo", [("k", "two words")])
    with pytest.raises(ValueError, match="not key:value"):
        read_records(_write(tmp_path, "a.txt", "record:x plain\n"))
    with pytest.raises(ValueError, match="record tag"):
        read_records(_write(tmp_path, "b.txt", "key:value\n"))


def _toy_fit(alpha=0.5, n_lambda=8):
    rng = np.random.default_rng(0)
    X = rng.normal(0.0, 1.0, (18, 4))
    y = np.repeat([0, 1, 2], 6)
    for cls in range(3):
        X[y == cls, cls] += 2.5
    loss = MultinomialLoss(X, y, intercept=True)
    penalty = PenaltySpec.build(
        loss.structure, alpha, gamma="sqrt_dim", xi=1.0, unpenalized_blocks=(0,)
    )
    config = SolverConfig(n_lambda=n_lambda, lambda_min_ratio=1e-2)
    return X, y, loss, fit_path(loss, penalty, config)


def test_fit_file_round_trip_reproduces_predictions(tmp_path):
    X, y, loss, path = _toy_fit()
    target = tmp_path / "fit.txt"
    with open(target, "w", encoding="utf-8") as f:
        write_fit_file(f, path, ["low", "mid", "high"], [("command", "fit")])
    back = read_fit_file(str(target))

    assert back.classes == ["low", "mid", "high"]
    assert back.n_lambda == path.n_lambda
    assert np.array_equal(back.lambdas, path.lambdas)
    assert np.array_equal(back.theta, path.theta)
    assert np.array_equal(back.pi, path.pi)
    name_of = {0: "low", 1: "mid", 2: "high"}
    for i in range(path.n_lambda):
        b0, coef = loss.split_flat(path.betas[i])
        assert np.array_equal(back.intercepts[i], b0)
        assert np.array_equal(back.coefs[i], coef)
        direct = [name_of[k] for k in predict_labels(X, b0, coef)]
        assert back.predict(X, i) == direct


def test_cv_file_structure(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.normal(0.0, 1.0, (12, 3))
    y = np.repeat([0, 1], 6)
    X[y == 1, 0] += 3.0
    result = cross_validate(
        X, y, [0.0, 1.0], k=3, seed=0, config=SolverConfig(n_lambda=5, lambda_min_ratio=1e-2)
    )
    target = tmp_path / "cv.txt"
    with open(target, "w", encoding="utf-8") as f:
        write_cv_file(f, result, ["a", "b"], 0.5, [("command", "cv")])
    records = read_records(str(target))
    kinds = [rtype for rtype, _ in records]
    assert kinds.count("baseline") == 2
    assert kinds.count("cv") == 10
    assert kinds.count("selected") == 2

    baselines = [fields for rtype, fields in records if rtype == "baseline"]
    assert all(float(b["majority_error"]) == 0.5 for b in baselines)
    for entry in result.per_alpha:
        rows = [
            fields
            for rtype, fields in records
            if rtype == "cv" and float(fields["alpha"]) == entry.alpha
        ]
        assert [float(r["lambda"]) for r in rows] == list(entry.lambdas)
        flagged = [int(r["index"]) for r in rows if r["subsequence"] == "true"]
        assert flagged == [int(i) for i in entry.subsequence_idx]


def test_sim_file_records(tmp_path):
    cfg = SimConfig(
        kind="sparse", active_features=4, zero_prob=0.5, alphas=(0.0, 1.0), replicates=2
    )
    rows = (
        SimRow(0, 0.0, 0.3, 0.1, 1.0, 0.9, 0.2, 0.5),
        SimRow(0, 1.0, 0.4, 0.2, 0.7, 0.8, 0.2, 0.3),
    )
    result = SimResult(design=cfg, rows=rows, failures=1)
    target = tmp_path / "sim.txt"
    with open(target, "w", encoding="utf-8") as f:
        write_sim_file(f, result, [("command", "simulate")])
    records = read_records(str(target))
    kinds = [rtype for rtype, _ in records]
    assert kinds.count("sim") == 2
    assert kinds.count("summary") == 2
    sims = [fields for rtype, fields in records if rtype == "sim"]
    assert float(sims[0]["excess_error"]) == 0.1
    assert float(sims[1]["tpr"]) == 0.7
    failures = [fields for rtype, fields in records if rtype == "failures"]
    assert failures == [{"count": "1"}]


def test_label_encoding_round_trip(tmp_path):
    X, y, loss, path = _toy_fit(n_lambda=3)
    odd = ["with space", "comma,colon:", "plain"]
    target = tmp_path / "fit.txt"
    with open(target, "w", encoding="utf-8") as f:
        write_fit_file(f, path, odd, [])
    assert read_fit_file(str(target)).classes == odd
