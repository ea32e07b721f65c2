import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vrdre.decode import DecodeConfigError, rsf_decode, symmetrize, threshold_decode
from vrdre.head import ProbMatrix


def brute_force_rsf(P: ProbMatrix, tau: float) -> np.ndarray:
    """Cell-by-cell evaluation of the margin rule, no vectorisation."""
    n = P.n
    out = np.zeros((n, n), dtype=np.int8)
    for i in range(n):
        valid = [k for k in range(n) if P.mask[i, k]]
        if not valid:
            continue
        row_max = max(P.probs[i, k] for k in valid)
        for j in valid:
            if P.probs[i, j] > 0.5 and row_max < P.probs[i, j] + tau:
                out[i, j] = 1
    return out


def random_prob_matrix(rng: np.random.Generator, n_max: int = 12) -> ProbMatrix:
    n = int(rng.integers(1, n_max + 1))
    probs = rng.random((n, n))
    # coarse values force ties and near-ties with the margin
    if rng.random() < 0.5:
        probs = np.round(probs, 1).clip(0.05, 0.95)
    mask = ~np.eye(n, dtype=bool)
    if rng.random() < 0.3:
        mask &= rng.random((n, n)) < 0.7
    return ProbMatrix(probs, mask)


def _row(values):
    n = len(values) + 1
    probs = np.zeros((n, n))
    probs[0, 1:] = values
    return ProbMatrix(probs, ~np.eye(n, dtype=bool))


class TestThreshold:
    def test_direct(self):
        P = ProbMatrix.full([[0.0, 0.6], [0.2, 0.0]])
        assert threshold_decode(P).cells.tolist() == [[0, 1], [0, 0]]

    def test_strict(self):
        assert not threshold_decode(ProbMatrix.full(np.full((3, 3), 0.5))).cells.any()

    def test_zero_threshold(self):
        P = ProbMatrix.full(np.full((3, 3), 1e-9))
        assert threshold_decode(P, 0.0).cells.tolist() == [[0, 1, 1], [1, 0, 1], [1, 1, 0]]


class TestRSF:
    def test_wide_margin(self):
        assert rsf_decode(_row([0.9, 0.85, 0.3]), 0.1).pairs() == {(0, 1), (0, 2)}

    def test_narrow_margin(self):
        assert rsf_decode(_row([0.9, 0.85, 0.3]), 0.01).pairs() == {(0, 1)}

    def test_tau_one_matches_threshold(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            P = random_prob_matrix(rng)
            assert rsf_decode(P, 1.0) == threshold_decode(P)

    @pytest.mark.parametrize("tau", [0.0, -0.1])
    def test_bad_tau(self, tau):
        with pytest.raises(DecodeConfigError):
            rsf_decode(_row([0.9]), tau)

    def test_row_below_threshold(self):
        assert rsf_decode(_row([0.4, 0.5]), 0.5).pairs() == set()

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.01, 0.1, 0.5]))
    def test_matches_brute_force(self, seed, tau):
        P = random_prob_matrix(np.random.default_rng(seed))
        assert np.array_equal(rsf_decode(P, tau).cells, brute_force_rsf(P, tau))

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(1e-4, 1.0), st.floats(1e-4, 1.0))
    def test_containment_and_monotone(self, seed, t1, t2):
        t1, t2 = sorted((t1, t2))
        P = random_prob_matrix(np.random.default_rng(seed))
        small, large, thr = rsf_decode(P, t1).cells, rsf_decode(P, t2).cells, threshold_decode(P).cells
        assert (small <= large).all()
        assert (large <= thr).all()

    @settings(max_examples=200, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([0.01, 0.1, 0.5]))
    def test_row_max_survives(self, seed, tau):
        P = random_prob_matrix(np.random.default_rng(seed))
        R = rsf_decode(P, tau).cells
        for i in range(P.n):
            if R[i].any():
                row = np.where(P.mask[i], P.probs[i], -np.inf)
                assert R[i, row == row.max()].all()


class TestSymmetrize:
    def test_max_rule(self):
        S = symmetrize(ProbMatrix.full([[0.0, 0.7], [0.2, 0.0]]))
        assert S.probs[0, 1] == S.probs[1, 0] == 0.7

    def test_symmetric_unchanged(self):
        P = ProbMatrix.full([[0.0, 0.3], [0.3, 0.0]])
        assert np.array_equal(symmetrize(P).probs, P.probs)

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_properties(self, seed):
        rng = np.random.default_rng(seed)
        P = random_prob_matrix(rng)
        S = symmetrize(P)
        valid = S.mask
        assert np.array_equal(valid, valid.T)
        assert np.array_equal(np.where(valid, S.probs, 0), np.where(valid, S.probs, 0).T)
        again = symmetrize(S)
        assert np.array_equal(again.probs, S.probs) and np.array_equal(again.mask, S.mask)
        perm = rng.permutation(P.n)
        ix = np.ix_(perm, perm)
        permuted = symmetrize(ProbMatrix(P.probs[ix], P.mask[ix]))
        assert np.array_equal(permuted.probs, S.probs[ix])
