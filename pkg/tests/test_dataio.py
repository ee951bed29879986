import struct

import numpy as np
import pytest

from pce_cal.dataio import (
    Dataset,
    SplitRole,
    assemble_dataset,
    load_csv,
    load_labels,
    load_npy,
    make_dataset,
    save_labels_npy,
    save_npy,
)
from pce_cal.errors import CsvParseError, InvalidInputError, NpyParseError


# ---------------------------------------------------------------------------
# NPY round trips
# ---------------------------------------------------------------------------

def test_round_trip_bitwise_identity(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(20):
        rows = int(rng.integers(0, 30))
        cols = int(rng.integers(1, 12))
        m = rng.normal(size=(rows, cols))
        path = tmp_path / f"m{i}.npy"
        save_npy(m, path)
        back = load_npy(path)
        assert back.shape == m.shape
        assert np.array_equal(back, m)  # bitwise: both float64


def test_zero_row_matrix_round_trip(tmp_path):
    path = tmp_path / "empty.npy"
    save_npy(np.zeros((0, 3)), path)
    back = load_npy(path)
    assert back.shape == (0, 3)


def test_writer_matches_numpy_bytes(tmp_path):
    # numpy's own writer is the layout oracle
    for shape in [(1, 1), (2, 3), (0, 3), (7, 5)]:
        m = np.arange(np.prod(shape), dtype=np.float64).reshape(shape)
        ours = tmp_path / "ours.npy"
        theirs = tmp_path / "theirs.npy"
        save_npy(m, ours)
        np.save(theirs, m)
        assert ours.read_bytes() == theirs.read_bytes()


def test_numpy_reads_our_files_and_back(tmp_path):
    m = np.random.default_rng(1).normal(size=(4, 6))
    path = tmp_path / "m.npy"
    save_npy(m, path)
    assert np.array_equal(np.load(path), m)
    np.save(path, m)
    assert np.array_equal(load_npy(path), m)


def test_float32_payload_widens(tmp_path):
    m = np.array([[1.5, 2.5]], dtype=np.float32)
    path = tmp_path / "f4.npy"
    np.save(path, m)
    back = load_npy(path)
    assert back.dtype == np.float64
    assert np.array_equal(back, m.astype(np.float64))


def test_rank1_becomes_column(tmp_path):
    path = tmp_path / "v.npy"
    np.save(path, np.array([1.0, 2.0, 3.0]))
    assert load_npy(path).shape == (3, 1)


def test_label_path_int64(tmp_path):
    # written by an independent writer: raw bytes per the public layout
    header = b"{'descr': '<i8', 'fortran_order': False, 'shape': (4,), }"
    pad = (64 - (10 + len(header) + 1) % 64) % 64
    header = header + b" " * pad + b"\n"
    blob = (
        b"\x93NUMPY\x01\x00"
        + struct.pack("<H", len(header))
        + header
        + np.array([0, 1, 2, 1], dtype="<i8").tobytes()
    )
    path = tmp_path / "labels.npy"
    path.write_bytes(blob)
    assert load_labels(path).tolist() == [0, 1, 2, 1]


def test_labels_round_trip(tmp_path):
    path = tmp_path / "y.npy"
    save_labels_npy([3, 0, 1], path)
    assert load_labels(path).tolist() == [3, 0, 1]
    assert np.load(path).dtype == np.int64


def test_labels_from_single_column_csv(tmp_path):
    path = tmp_path / "y.csv"
    path.write_text("2\n0\n1.0\n")
    assert load_labels(path).tolist() == [2, 0, 1]
    bad = tmp_path / "wide.csv"
    bad.write_text("1,2\n")
    with pytest.raises(InvalidInputError):
        load_labels(bad)
    frac = tmp_path / "frac.csv"
    frac.write_text("0.5\n")
    with pytest.raises(InvalidInputError):
        load_labels(frac)


# ---------------------------------------------------------------------------
# NPY parse errors carry byte offsets
# ---------------------------------------------------------------------------

def test_bad_magic(tmp_path):
    path = tmp_path / "bad.npy"
    path.write_bytes(b"NOTNPY\x01\x00rest")
    with pytest.raises(NpyParseError) as err:
        load_npy(path)
    assert err.value.offset == 0


def test_unsupported_version(tmp_path):
    path = tmp_path / "v2.npy"
    path.write_bytes(b"\x93NUMPY\x02\x00" + b"\x00" * 8)
    with pytest.raises(NpyParseError) as err:
        load_npy(path)
    assert err.value.offset == 6


def test_fortran_order_rejected(tmp_path):
    path = tmp_path / "f.npy"
    m = np.asfortranarray(np.arange(6.0).reshape(2, 3))
    np.save(path, m)
    with pytest.raises(NpyParseError, match="fortran"):
        load_npy(path)


def test_unsupported_dtype(tmp_path):
    path = tmp_path / "c.npy"
    np.save(path, np.zeros((2, 2), dtype=np.complex128))
    with pytest.raises(NpyParseError, match="dtype"):
        load_npy(path)


def test_truncated_payload(tmp_path):
    src = tmp_path / "full.npy"
    save_npy(np.ones((4, 4)), src)
    cut = src.read_bytes()[:-8]
    dst = tmp_path / "cut.npy"
    dst.write_bytes(cut)
    with pytest.raises(NpyParseError, match="payload"):
        load_npy(dst)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

def test_csv_basic(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("1,2\n3,4\n")
    assert load_csv(path).tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_csv_header_skipped(tmp_path):
    path = tmp_path / "h.csv"
    path.write_text("x,y\n1,2\n")
    assert load_csv(path, has_header=True).tolist() == [[1.0, 2.0]]


def test_csv_ragged_row(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("1,2\n3\n")
    with pytest.raises(CsvParseError) as err:
        load_csv(path)
    assert err.value.line == 2


def test_csv_non_numeric(tmp_path):
    path = tmp_path / "n.csv"
    path.write_text("1,2\n3,oops\n")
    with pytest.raises(CsvParseError) as err:
        load_csv(path)
    assert err.value.line == 2


# ---------------------------------------------------------------------------
# Dataset assembly
# ---------------------------------------------------------------------------

def _write_triplet(tmp_path, n=100, d=4, m=3, labels=True):
    rng = np.random.default_rng(5)
    save_npy(rng.normal(size=(n, d)), tmp_path / "z.npy")
    save_npy(rng.normal(size=(n, m)), tmp_path / "o.npy")
    if labels:
        save_labels_npy(rng.integers(0, m, size=n), tmp_path / "y.npy")


def test_assemble_matching_triplet(tmp_path):
    _write_triplet(tmp_path)
    ds = assemble_dataset(
        tmp_path / "z.npy", tmp_path / "o.npy", tmp_path / "y.npy", SplitRole.VALIDATION
    )
    assert isinstance(ds, Dataset)
    assert ds.n == 100 and ds.num_classes == 3 and ds.feature_dim == 4


def test_assemble_row_count_mismatch(tmp_path):
    _write_triplet(tmp_path)
    save_npy(np.zeros((99, 3)), tmp_path / "o99.npy")
    with pytest.raises(InvalidInputError, match="features=100 logits=99"):
        assemble_dataset(
            tmp_path / "z.npy", tmp_path / "o99.npy", tmp_path / "y.npy", SplitRole.VALIDATION
        )


def test_assemble_test_without_labels(tmp_path):
    _write_triplet(tmp_path, labels=False)
    ds = assemble_dataset(tmp_path / "z.npy", tmp_path / "o.npy", None, SplitRole.TEST)
    assert ds.labels is None


def test_assemble_label_out_of_range(tmp_path):
    _write_triplet(tmp_path)
    save_labels_npy([0, 1, 5] + [0] * 97, tmp_path / "ybad.npy")
    with pytest.raises(InvalidInputError, match="classes"):
        assemble_dataset(
            tmp_path / "z.npy", tmp_path / "o.npy", tmp_path / "ybad.npy", SplitRole.VALIDATION
        )


def test_labels_required_off_test_split(tmp_path):
    _write_triplet(tmp_path, labels=False)
    with pytest.raises(InvalidInputError):
        assemble_dataset(tmp_path / "z.npy", tmp_path / "o.npy", None, SplitRole.HOLDOUT)


def test_make_dataset_fuzz_never_violates_invariants():
    rng = np.random.default_rng(9)
    for _ in range(50):
        n1, n2, n3 = rng.integers(1, 6, size=3)
        m = int(rng.integers(1, 4))
        try:
            ds = make_dataset(
                rng.normal(size=(n1, 2)),
                rng.normal(size=(n2, m)),
                rng.integers(0, max(m, 1), size=n3),
                SplitRole.VALIDATION,
            )
        except InvalidInputError:
            continue
        assert ds.features.shape[0] == ds.logits.shape[0] == ds.labels.shape[0]
        assert ds.num_classes >= 2
        assert int(ds.labels.max()) < ds.num_classes
