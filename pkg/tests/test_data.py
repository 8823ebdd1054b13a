import numpy as np
import pytest

from macensemble.data import (LabelMatrix, PredictionTensor, align, append_sub_models,
                              load_labels, load_predictions, parse_index_list, save_labels,
                              save_matrix, save_predictions)
from macensemble.errors import AnyConsistencyError, DataFormatError

CLASSES = ["a", "b", "any"]


def make_tensor(rng, s=4, n=3, prefix="m"):
    ids = [f"s{i}" for i in range(s)]
    return PredictionTensor(rng.uniform(0, 1, (s, n, 3)), ids, [f"{prefix}{j}" for j in range(n)],
                            list(CLASSES))


def write(path, text):
    path.write_text(text)
    return path


def test_prediction_round_trip_is_exact(tmp_path, rng):
    t = make_tensor(rng)
    paths = save_predictions(t, tmp_path)
    back = load_predictions(paths)
    np.testing.assert_array_equal(back.values, t.values)
    assert back.sub_model_ids == t.sub_model_ids
    assert back.class_names == CLASSES


def test_rows_aligned_by_id_not_position(tmp_path):
    a = write(tmp_path / "a.csv", "sample_id,c\nx,0.1\ny,0.2\n")
    b = write(tmp_path / "b.csv", "sample_id,c\ny,0.9\nx,0.8\n")
    t = load_predictions([a, b])
    assert t.sample_ids == ["x", "y"]
    np.testing.assert_array_equal(t.values[:, :, 0], [[0.1, 0.8], [0.2, 0.9]])


def test_bad_number_reports_line_and_column(tmp_path):
    p = write(tmp_path / "a.csv", "sample_id,c1,c2\nx,0.1,0.2\ny,0.3,oops\n")
    with pytest.raises(DataFormatError) as info:
        load_predictions([p])
    assert info.value.line == 3 and info.value.column == "c2"
    assert "a.csv" in str(info.value)


def test_probability_out_of_range(tmp_path):
    p = write(tmp_path / "a.csv", "sample_id,c\nx,1.5\n")
    with pytest.raises(DataFormatError, match="outside"):
        load_predictions([p])


def test_ragged_row_and_duplicate_id(tmp_path):
    with pytest.raises(DataFormatError, match="fields"):
        load_predictions([write(tmp_path / "a.csv", "sample_id,c\nx,0.1,0.2\n")])
    with pytest.raises(DataFormatError, match="duplicate"):
        load_predictions([write(tmp_path / "b.csv", "sample_id,c\nx,0.1\nx,0.2\n")])


def test_bad_header(tmp_path):
    with pytest.raises(DataFormatError, match="header"):
        load_predictions([write(tmp_path / "a.csv", "id,c\nx,0.1\n")])
    with pytest.raises(DataFormatError):
        load_predictions([write(tmp_path / "e.csv", "")])


def test_missing_file():
    with pytest.raises(DataFormatError, match="cannot open"):
        load_predictions(["/nonexistent/file.csv"])


def test_mismatched_samples_are_named(tmp_path):
    a = write(tmp_path / "a.csv", "sample_id,c\nx,0.1\ny,0.2\n")
    b = write(tmp_path / "b.csv", "sample_id,c\nx,0.1\nz,0.2\n")
    with pytest.raises(DataFormatError) as info:
        load_predictions([a, b])
    assert "'y'" in str(info.value) and "'z'" in str(info.value)


def test_mismatched_class_header(tmp_path):
    a = write(tmp_path / "a.csv", "sample_id,c\nx,0.1\n")
    b = write(tmp_path / "b.csv", "sample_id,d\nx,0.1\n")
    with pytest.raises(DataFormatError, match="class header"):
        load_predictions([a, b])


def test_duplicate_sub_model_ids(tmp_path):
    a = write(tmp_path / "a.csv", "sample_id,c\nx,0.1\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_predictions([a, a])


def test_append_sub_models(rng):
    t = make_tensor(rng)
    more = make_tensor(rng, n=2, prefix="u")
    full = append_sub_models(t, more)
    assert full.sub_model_ids == ["m0", "m1", "m2", "u0", "u1"]
    np.testing.assert_array_equal(full.values[:, 3:], more.values)
    assert append_sub_models(t, more.select([])) is t
    with pytest.raises(ValueError, match="duplicate"):
        append_sub_models(t, t)
    other = PredictionTensor(more.values, more.sample_ids, more.sub_model_ids, ["x", "y", "z"])
    with pytest.raises(ValueError, match="class"):
        append_sub_models(t, other)


def test_labels_round_trip_and_any_check(tmp_path, caplog):
    y = LabelMatrix(np.array([[1, 0, 1], [0, 0, 0]]), ["s0", "s1"], list(CLASSES))
    save_labels(y, tmp_path / "y.csv")
    back = load_labels(tmp_path / "y.csv", "fail")
    np.testing.assert_array_equal(back.values, y.values)

    write(tmp_path / "bad.csv", "sample_id,a,b,any\ns0,1,0,0\ns1,0,0,0\n")
    with pytest.raises(AnyConsistencyError) as info:
        load_labels(tmp_path / "bad.csv", "fail")
    assert info.value.sample_ids == ["s0"]
    with caplog.at_level("WARNING"):
        load_labels(tmp_path / "bad.csv", "warn")
    assert "s0" in caplog.text
    assert load_labels(tmp_path / "bad.csv", "ignore").values.shape == (2, 3)


def test_non_binary_label(tmp_path):
    write(tmp_path / "y.csv", "sample_id,a\ns0,0.5\n")
    with pytest.raises(DataFormatError, match="0 or 1"):
        load_labels(tmp_path / "y.csv")


def test_align(rng):
    t = make_tensor(rng)
    y = LabelMatrix(np.zeros((4, 3)), t.sample_ids, list(CLASSES))
    align(t, y)
    with pytest.raises(ValueError):
        align(t, LabelMatrix(np.zeros((4, 3)), ["q", "s1", "s2", "s3"], list(CLASSES)))


def test_save_matrix_is_repr_exact(tmp_path):
    v = np.array([[0.1 + 0.2, 1 / 3]])
    save_matrix(tmp_path / "o.csv", v, ["s"], ["a", "b"])
    row = (tmp_path / "o.csv").read_text().splitlines()[1].split(",")
    assert [float(x) for x in row[1:]] == list(v[0])


def test_parse_index_list():
    assert parse_index_list("0..3,7, 9..9") == [0, 1, 2, 3, 7, 9]
    assert parse_index_list("") == []
    with pytest.raises(ValueError):
        parse_index_list("0..5", upper=4)


def test_tensor_validation(rng):
    with pytest.raises(ValueError):
        PredictionTensor(np.full((1, 1, 1), 2.0), ["s"], ["m"], ["c"])
    with pytest.raises(ValueError):
        PredictionTensor(np.zeros((1, 2, 1)), ["s"], ["m", "m"], ["c"])
