import numpy as np
import pytest
import scipy.io
from hypothesis import given, strategies as st

from softcontact.sparse import (BlockSparseSym, NotPositiveDefinite, PartitionPermutation,
                                dump_matrix_market, factorize_with_schur, fill_in,
                                order_within_partitions, recover_nonparticipating, solve_full,
                                symbolic_factorization)
from conftest import random_block_spd


def _factor(A, sizes, mask, reorder=True):
    M = BlockSparseSym.from_dense(A, sizes)
    perm = order_within_partitions(M.block_pattern(), mask, sizes, reorder=reorder)
    return M, perm, factorize_with_schur(M, perm)


def _dense_schur(A, f):
    n, p = f.nonparticipating_dofs, f.participating_dofs
    App, Apn, Ann = A[np.ix_(p, p)], A[np.ix_(p, n)], A[np.ix_(n, n)]
    return App - Apn @ np.linalg.solve(Ann, Apn.T) if len(n) else App


def test_block_sparse_roundtrip(rng):
    A, sizes = random_block_spd(rng, 6, prismatic=2)
    M = BlockSparseSym.from_dense(A, sizes)
    assert np.array_equal(M.to_dense(), A)
    x = rng.standard_normal(len(A))
    assert np.allclose(M @ x, A @ x)
    C = M.combine(2.0, M.scaled(3.0), -1.0)
    assert np.allclose(C.to_dense(), -A)
    with pytest.raises(ValueError):
        BlockSparseSym.from_dense(A, [3, 3])


def test_from_triplets_sums_duplicates():
    M = BlockSparseSym.from_triplets([0, 0, 1, 0], [0, 0, 0, 1], [1.0, 2.0, 5.0, 5.0], [1, 1])
    assert np.array_equal(M.to_dense(), [[3.0, 5.0], [5.0, 0.0]])


def test_schur_hand_example():
    A = np.array([[4.0, 2.0], [2.0, 3.0]])
    M = BlockSparseSym.from_dense(A, [1, 1])
    perm = order_within_partitions(M.block_pattern(), [False, True], [1, 1])
    f = factorize_with_schur(M, perm)
    assert f.schur.shape == (1, 1) and f.schur[0, 0] == pytest.approx(2.0, rel=1e-15)


def test_no_nonparticipating_gives_schur_equal_a(rng):
    A, sizes = random_block_spd(rng, 5)
    _, perm, f = _factor(A, sizes, np.ones(5, bool))
    assert perm.m_n == 0
    assert np.allclose(f.schur, A[np.ix_(perm.dofs, perm.dofs)], rtol=0, atol=1e-14 * np.abs(A).max())


def test_no_participating_gives_empty_schur(rng):
    A, sizes = random_block_spd(rng, 5)
    _, perm, f = _factor(A, sizes, np.zeros(5, bool))
    assert f.schur.shape == (0, 0) and perm.m_p == 0


def test_schur_random_60(rng):
    A, sizes = random_block_spd(rng, 20)
    mask = rng.random(20) < 0.3
    _, _, f = _factor(A, sizes, mask)
    assert np.linalg.norm(f.schur - _dense_schur(A, f)) <= 1e-10 * np.linalg.norm(A, 2)


@given(st.integers(2, 25), st.integers(0, 3), st.floats(0.0, 1.0), st.integers(0, 2 ** 31))
def test_factor_identities(num_nodes, prismatic, frac, seed):
    rng = np.random.default_rng(seed)
    A, sizes = random_block_spd(rng, num_nodes, prismatic=prismatic)
    mask = rng.random(len(sizes)) < frac
    _, perm, f = _factor(A, sizes, mask)
    Ap = A[np.ix_(perm.dofs, perm.dofs)]
    L = f.lower_matrix().toarray()
    scale = np.linalg.norm(A, 2)
    # P A P^T = L L^T, L lower with positive diagonal
    assert np.allclose(L, np.tril(L))
    assert np.all(np.diag(L) > 0)
    assert np.linalg.norm(L @ L.T - Ap) <= 1e-12 * scale * len(A)
    # recorded Schur complement: dense oracle and L_pp L_pp^T = A_pp - L_pn L_pn^T
    Lnn, Lpn, Lpp = f.blocks()
    m = f.m_n
    assert np.linalg.norm(f.schur - _dense_schur(A, f)) <= 1e-10 * scale
    if f.m_p:
        assert np.linalg.norm(f.schur - Lpp @ Lpp.T) <= 1e-12 * scale * len(A)
        assert np.linalg.norm(f.schur - (Ap[m:, m:] - Lpn @ Lpn.T)) <= 1e-12 * scale * len(A)
        np.linalg.cholesky(f.schur)  # SPD preserved
    # solves
    x = rng.standard_normal(len(A))
    assert np.linalg.norm(solve_full(f, A @ x) - x) <= 1e-10 * np.linalg.norm(x) * np.linalg.cond(A)


def test_solve_examples(rng):
    A, sizes = random_block_spd(rng, 8, prismatic=1)
    _, _, f = _factor(A, sizes, rng.random(9) < 0.5)
    assert np.all(f.solve(np.zeros(len(A))) == 0)
    ones = np.ones(len(A))
    assert np.allclose(f.solve(A @ ones), ones, atol=1e-10)
    b = rng.standard_normal(len(A))
    x = np.linalg.solve(A, b)
    assert np.max(np.abs(f.solve(b) - x)) <= 1e-10 * np.linalg.norm(x)
    assert f.solve_count == 3


def test_recover_nonparticipating(rng):
    A, sizes = random_block_spd(rng, 12, prismatic=1)
    mask = rng.random(13) < 0.4
    mask[0] = True
    _, _, f = _factor(A, sizes, mask)
    n, p = f.nonparticipating_dofs, f.participating_dofs
    assert np.all(recover_nonparticipating(f, np.zeros(len(p))) == 0)
    dv_p = rng.standard_normal(len(p))
    dv_n = recover_nonparticipating(f, dv_p)
    oracle = -np.linalg.solve(A[np.ix_(n, n)], A[np.ix_(n, p)] @ dv_p)
    assert np.linalg.norm(dv_n - oracle) <= 1e-10 * np.linalg.norm(oracle)
    # upper block row of the partitioned system has zero residual
    dv = f.scatter(dv_n, dv_p)
    assert np.linalg.norm((A @ dv)[n]) <= 1e-10 * np.linalg.norm(A @ dv)


def test_recover_decoupled_partitions_is_zero(rng):
    A, sizes = random_block_spd(rng, 6)
    mask = np.array([False, False, False, True, True, True])
    A[:9, 9:] = 0
    A[9:, :9] = 0
    _, _, f = _factor(A, sizes, mask)
    assert np.all(f.recover_nonparticipating(rng.standard_normal(9)) == 0)


def test_reduced_plus_recovery_matches_full_solve(rng):
    for _ in range(10):
        A, sizes = random_block_spd(rng, 15, prismatic=2)
        mask = rng.random(17) < 0.3
        _, _, f = _factor(A, sizes, mask)
        p = f.participating_dofs
        g = np.zeros(len(A))
        g[p] = rng.standard_normal(len(p))  # J^T gamma only touches participating dofs
        dv_p = np.linalg.solve(f.schur, g[p]) if len(p) else np.zeros(0)
        dv = f.scatter(f.recover_nonparticipating(dv_p), dv_p)
        full = f.solve(g)
        assert np.linalg.norm(dv - full) <= 1e-10 * max(np.linalg.norm(full), 1e-300)


def test_permutation_is_bijective_with_trailing_participants(rng):
    A, sizes = random_block_spd(rng, 10, prismatic=2)
    mask = rng.random(12) < 0.5
    M = BlockSparseSym.from_dense(A, sizes)
    perm = order_within_partitions(M.block_pattern(), mask, sizes)
    assert sorted(perm.dofs.tolist()) == list(range(len(A)))
    assert set(perm.order[perm.num_nodes_n:].tolist()) == set(np.flatnonzero(mask).tolist())
    assert np.array_equal(perm.dofs[perm.inverse()], np.arange(len(A)))
    with pytest.raises(ValueError):
        PartitionPermutation(np.array([0, 0]), 1, np.array([3, 3]))


def test_chain_graph_has_no_fill():
    n = 12
    A = np.zeros((3 * n, 3 * n))
    for i in range(n):
        A[3 * i:3 * i + 3, 3 * i:3 * i + 3] = 4 * np.eye(3)
        if i:
            A[3 * i:3 * i + 3, 3 * i - 3:3 * i] = -np.eye(3)
            A[3 * i - 3:3 * i, 3 * i:3 * i + 3] = -np.eye(3)
    M = BlockSparseSym.from_dense(A, [3] * n)
    perm = order_within_partitions(M.block_pattern(), np.zeros(n, bool), [3] * n)
    assert fill_in(M.block_pattern(), perm.order) == 0
    assert fill_in(M.block_pattern(), range(n)) == 0
    assert factorize_with_schur(M, perm).fill_in == 0


def _brute_fill(pattern, order):
    """Fill count by explicit elimination-graph simulation."""
    pos = {v: k for k, v in enumerate(order)}
    adj = [set(pos[a] for a in pattern[v]) for v in order]
    fill = 0
    for k in range(len(order)):
        later = sorted(a for a in adj[k] if a > k)
        for i in later:
            for j in later:
                if i < j and j not in adj[i]:
                    adj[i].add(j)
                    adj[j].add(i)
                    fill += 1
    return fill


def test_symbolic_factorization_matches_elimination(rng):
    for _ in range(20):
        A, sizes = random_block_spd(rng, 15, density=0.2)
        pat = BlockSparseSym.from_dense(A, sizes).block_pattern()
        order = rng.permutation(15)
        assert fill_in(pat, order) == _brute_fill(pat, order)
        struct = symbolic_factorization(pat, order)
        L = np.linalg.cholesky(A[np.ix_(*[np.concatenate([np.arange(3 * o, 3 * o + 3)
                                                          for o in order])] * 2)])
        for k, col in enumerate(struct):
            nz = {j for j in range(k, 15) if np.any(np.abs(L[3 * j:3 * j + 3, 3 * k:3 * k + 3]) > 0)}
            assert nz <= set(col)


def test_minimum_degree_reduces_fill(rng):
    wins = 0
    for _ in range(50):
        A, sizes = random_block_spd(rng, 30, density=0.08)
        M = BlockSparseSym.from_dense(A, sizes)
        pat = M.block_pattern()
        mask = rng.random(30) < 0.3
        md = order_within_partitions(pat, mask, sizes, reorder=True)
        nat = order_within_partitions(pat, mask, sizes, reorder=False)
        wins += fill_in(pat, md.order) <= fill_in(pat, nat.order)
    assert wins >= 45


def test_not_positive_definite_reports_pivot_and_jitter():
    A = np.diag([1.0, 1.0, 1.0, 1.0, 1.0, -1e-20])
    M = BlockSparseSym.from_dense(A, [3, 3])
    perm = order_within_partitions(M.block_pattern(), [False, False], [3, 3], reorder=False)
    with pytest.raises(NotPositiveDefinite) as exc:
        factorize_with_schur(M, perm)
    assert exc.value.pivot == 3
    # a semidefinite matrix factorizes after the single diagonal boost
    B = np.diag([1.0, 1.0, 1.0, 1.0, 1.0, 0.0])
    f = factorize_with_schur(BlockSparseSym.from_dense(B, [3, 3]), perm, jitter=True)
    assert np.isfinite(f.lower_matrix().toarray()).all()
    with pytest.raises(NotPositiveDefinite):
        factorize_with_schur(BlockSparseSym.from_dense(-np.eye(6), [3, 3]), perm, jitter=True)


def test_matrix_market_dump(tmp_path, rng):
    A, sizes = random_block_spd(rng, 4)
    M = BlockSparseSym.from_dense(A, sizes)
    dump_matrix_market(tmp_path / "A.mtx", M, comment="test")
    back = scipy.io.mmread(str(tmp_path / "A.mtx")).toarray()
    assert np.array_equal(back, np.tril(A))
