import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_array_equal

from mnrank.errors import InputError
from mnrank.metrics import confusion, mcc, mcc_from_counts, mcc_table, render_report, report


def binary_mcc(m):
    tn, fp, fn, tp = m[0, 0], m[0, 1], m[1, 0], m[1, 1]
    d = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return 0.0 if d == 0 else (tp * tn - fp * fn) / math.sqrt(d)


@given(st.lists(st.integers(0, 500), min_size=4, max_size=4))
@settings(max_examples=100)
def test_matches_binary_formula(cells):
    m = np.array(cells).reshape(2, 2)
    assert mcc(m) == pytest.approx(binary_mcc(m), abs=1e-12)


def test_diagonal_and_constant_predictions(rng):
    assert mcc(np.diag([5, 3, 9])) == pytest.approx(1.0)
    m = np.zeros((3, 3), int)
    m[:, 1] = [4, 5, 6]
    assert mcc(m) == 0.0
    assert mcc(np.zeros((2, 2))) == 0.0


def test_vectorized_stack(rng):
    stack = rng.integers(0, 50, size=(10, 3, 3))
    assert_array_equal(mcc_from_counts(stack), [mcc(m) for m in stack])


@given(st.lists(st.integers(0, 3), min_size=2, max_size=60), st.randoms(use_true_random=False))
@settings(max_examples=50)
def test_label_permutation_invariance(true, r):
    true = np.array(true)
    pred = np.array([r.randrange(4) for _ in true])
    perm = np.array([2, 0, 3, 1])
    a = mcc(confusion(true, pred, range(4)))
    b = mcc(confusion(perm[true], perm[pred], range(4)))
    assert a == pytest.approx(b, abs=1e-12)
    assert -1.0 - 1e-12 <= a <= 1.0 + 1e-12


def test_confusion_counts():
    cm = confusion([0, 1, 1, 2], [0, 2, 1, 2], (0, 1, 2))
    assert_array_equal(cm.counts, [[1, 0, 0], [0, 1, 1], [0, 0, 1]])
    assert cm.total == 4
    assert cm.percentages()[1, 2] == 25.0


def test_confusion_errors():
    with pytest.raises(InputError):
        confusion([0, 1], [0], (0, 1))
    with pytest.raises(InputError):
        confusion([], [], (0, 1))
    with pytest.raises(InputError):
        confusion([0, 3], [0, 1], (0, 1))


def test_report_files(tmp_path):
    cm = confusion([0, 1, 1, 2, 2, 2], [0, 1, 2, 2, 2, 1], (0, 1, 2))
    csv_text, text = report(cm, mcc(cm), {"partition": "test"}, tmp_path / "r")
    assert (tmp_path / "r.csv").read_text() == csv_text
    assert csv_text.splitlines()[0] == "True Rank,Pred 0,Pred 1,Pred 2"
    assert "16.667" in csv_text
    assert text.strip().endswith(f"MCC = {mcc(cm):.4f}")
    six = confusion(list(range(6)), list(range(6)), range(6))
    assert "16.6667" in render_report(six, 1.0)[0]


def test_mcc_table():
    out = mcc_table({"1000": {"S0": 0.3, "S0 and S5": 0.5}}, col_order=("S0 and S5", "S0", "S5"))
    lines = out.splitlines()
    assert lines[0].split() == ["B", "S0", "and", "S5", "S0", "S5"]
    assert "0.500" in lines[1] and "0.300" in lines[1]


def test_documented_confusion_and_mcc_values():
    cm = confusion([0, 0, 1], [0, 1, 1], (0, 1))
    assert_array_equal(cm.counts, [[1, 1], [0, 1]])
    assert mcc(np.array([[40, 10], [10, 40]])) == pytest.approx(0.6, abs=1e-12)
    assert mcc(np.outer([3, 1, 2], [1, 4, 2])) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(InputError):
        confusion([], [], (0, 1))
