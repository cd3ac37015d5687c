import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from addl.dataset import LabelMatrix, LabeledDataset, one_hot, partition, synth_generate
from addl.model import AddlModel, Codes, Hyperparams, init_model, objective
from addl.trainer import (TRACE_HEADER, ProjectionUndefinedError, TrainOptions,
                          code_objective, train, update_classifier, update_codes,
                          update_dictionary, update_projection, update_row_weights)

from conftest import random_instance


def num_grad(f, M, h=1e-5):
    G = np.zeros_like(M)
    for idx in np.ndindex(*M.shape):
        E = np.zeros_like(M)
        E[idx] = h
        G[idx] = (f(M + E) - f(M - E)) / (2 * h)
    return G


def surrogate(model, codes, part, H):
    """Objective with tau ||S||_{2,1} replaced by its IRLS majoriser tau tr(S' Lambda S)."""
    br = objective(model, codes, part, H)
    quad = sum(np.sum(d[:, None] * S ** 2) for S, d in zip(codes.S, codes.lam_diag))
    return br.total - model.hyper.tau * br.sparsity + model.hyper.tau * quad


# --- code update ----------------------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
def test_code_update_matches_stacked_least_squares(seed):
    ds, model, codes, part, H = random_instance(seed)
    hp = model.hyper
    new = update_codes(model, codes, part)
    k = model.atoms_per_class
    for l in range(model.class_count):
        Xl = part.block(l)
        m = Xl.shape[1]
        I = np.eye(m)
        rows = [np.kron(I, model.D[l])]
        rhs = [Xl.ravel(order="F")]
        for j in range(model.class_count):
            if j != l:
                rows.append(np.sqrt(hp.alpha) * np.kron(I, model.D[j]))
                rhs.append(np.zeros(m * model.dim))
        rows.append(np.sqrt(hp.tau) * np.eye(m * k))
        rhs.append(np.sqrt(hp.tau) * (model.P[l] @ Xl).ravel(order="F"))
        rows.append(np.sqrt(hp.tau) * np.kron(I, np.diag(np.sqrt(codes.lam_diag[l]))))
        rhs.append(np.zeros(m * k))
        sol = np.linalg.lstsq(np.vstack(rows), np.concatenate(rhs), rcond=None)[0]
        ref = sol.reshape((k, m), order="F")
        assert np.linalg.norm(new.S[l] - ref) <= 1e-8 * max(np.linalg.norm(ref), 1e-300)


def test_code_update_zero_dictionary_halves_projection():
    ds, model, codes, part, H = random_instance(2)
    model = model.replace(D=[np.zeros_like(d) for d in model.D])
    codes = Codes(codes.S, [np.ones_like(d) for d in codes.lam_diag])
    new = update_codes(model, codes, part)
    for l in range(model.class_count):
        np.testing.assert_allclose(new.S[l], model.P[l] @ part.block(l) / 2, rtol=1e-14, atol=1e-15)


def test_code_update_large_tau_limit():
    ds, model, codes, part, H = random_instance(3, tau=1e8)
    new = update_codes(model, codes, part)
    for l in range(model.class_count):
        ref = (model.P[l] @ part.block(l)) / (1.0 + codes.lam_diag[l])[:, None]
        np.testing.assert_allclose(new.S[l], ref, atol=1e-6 * max(1, np.abs(ref).max()))


def test_decoupled_code_update_ignores_incoherence():
    ds, model, codes, part, H = random_instance(4, couple_codes=False)
    new = update_codes(model, codes, part)
    hp = model.hyper
    for l in range(model.class_count):
        D, Xl = model.D[l], part.block(l)
        A = D.T @ D + hp.tau * np.eye(D.shape[1]) + hp.tau * np.diag(codes.lam_diag[l])
        ref = np.linalg.solve(A, hp.tau * model.P[l] @ Xl + D.T @ Xl)
        np.testing.assert_allclose(new.S[l], ref, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_code_update_decreases_surrogate(seed):
    ds, model, codes, part, H = random_instance(seed)
    before = surrogate(model, codes, part, H)
    after = surrogate(model, update_codes(model, codes, part), part, H)
    assert after <= before + 1e-10 * abs(before)


@pytest.mark.parametrize("seed", range(5))
def test_irls_decreases_code_objective(seed):
    ds, model, codes, part, H = random_instance(seed)
    codes = update_row_weights(update_codes(model, codes, part), model.hyper.eps_row)
    prev = code_objective(model, codes, part)
    for _ in range(15):
        codes = update_row_weights(update_codes(model, codes, part), model.hyper.eps_row)
        cur = code_objective(model, codes, part)
        assert cur <= prev * (1 + 1e-9)
        prev = cur


def test_row_weights():
    S = np.array([[3.0, 4.0], [0.0, 0.0]])
    out = update_row_weights(Codes([S], [np.ones(2)]), 1e-8)
    np.testing.assert_allclose(out.lam_diag[0], [0.1, 0.5e8])


# --- projection update ------------------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
def test_projection_stationary(seed):
    ds, model, codes, part, H = random_instance(seed)
    hp = model.hyper
    P = update_projection(model, codes, part, H)
    X = part.features
    for l in range(model.class_count):
        Xl, Xb, Wl, Sl = part.block(l), part.complement(l), model.W[l], codes.S[l]
        G = hp.tau * np.eye(Wl.shape[1]) + hp.lam * Wl.T @ Wl

        def f(M):
            return (hp.tau * (np.sum((M @ Xl - Sl) ** 2) + np.sum((M @ Xb) ** 2))
                    + hp.lam * (np.sum((H.blocks[l] - Wl @ M @ Xl) ** 2)
                                + np.sum((Wl @ M @ Xb) ** 2))
                    + hp.gamma * np.trace(M.T @ G @ M))

        g = num_grad(f, P[l])
        assert np.linalg.norm(g) <= 1e-5 * (1 + abs(f(P[l])))
        # explicit inverses agree with the Cholesky route
        ref = (np.linalg.inv(G) @ (hp.tau * Sl @ Xl.T + hp.lam * Wl.T @ H.blocks[l] @ Xl.T)
               @ np.linalg.inv(X @ X.T + hp.gamma * np.eye(X.shape[0])))
        assert np.linalg.norm(P[l] - ref) <= 1e-10 * np.linalg.norm(ref) * np.linalg.cond(X @ X.T)


def test_projection_zero_classifier():
    ds, model, codes, part, H = random_instance(1)
    model = model.replace(W=[np.zeros_like(w) for w in model.W])
    P = update_projection(model, codes, part, H)
    X = part.features
    R = np.linalg.inv(X @ X.T + model.hyper.gamma * np.eye(X.shape[0]))
    for l in range(model.class_count):
        np.testing.assert_allclose(P[l], codes.S[l] @ part.block(l).T @ R, rtol=1e-8, atol=1e-10)


def test_projection_fixed_point():
    """Class data on disjoint coordinates, P_old already null on other classes."""
    rng = np.random.default_rng(0)
    X0 = np.vstack([rng.standard_normal((3, 10)) * 2 + 3, np.zeros((3, 10))])
    X1 = np.vstack([np.zeros((3, 10)), rng.standard_normal((3, 10)) * 2 + 3])
    ds = LabeledDataset(np.hstack([X0, X1]), [0] * 10 + [1] * 10, 2)
    part = partition(ds)
    hp = Hyperparams(k=2)
    P_old = [np.hstack([rng.standard_normal((2, 3)), np.zeros((2, 3))]),
             np.hstack([np.zeros((2, 3)), rng.standard_normal((2, 3))])]
    W = [rng.standard_normal((2, 2)) for _ in range(2)]
    model = AddlModel(D=[np.zeros((6, 2))] * 2, P=P_old, W=W, hyper=hp)
    codes = Codes(S=[P_old[l] @ part.block(l) for l in range(2)], lam_diag=[np.ones(2)] * 2)
    H = LabelMatrix(H=None, blocks=[W[l] @ P_old[l] @ part.block(l) for l in range(2)])
    P = update_projection(model, codes, part, H)
    for l in range(2):
        assert np.linalg.norm(P[l] - P_old[l]) <= 10 * hp.gamma * np.linalg.norm(P_old[l])


def test_projection_undefined():
    ds, model, codes, part, H = random_instance(0, tau=0.0, lam=0.0)
    with pytest.raises(ProjectionUndefinedError):
        update_projection(model, codes, part, H)


def test_projection_tau_zero_minimum_norm():
    ds, model, codes, part, H = random_instance(5, tau=0.0, k=4)
    # rank-one classifier blocks make lam W'W singular
    model = model.replace(W=[np.outer(w[:, 0], np.ones(4)) for w in model.W])
    P = update_projection(model, codes, part, H)
    X = part.features
    R = np.linalg.inv(X @ X.T + model.hyper.gamma * np.eye(X.shape[0]))
    for l in range(model.class_count):
        Wl = model.W[l]
        ref = np.linalg.pinv(Wl.T @ Wl) @ Wl.T @ H.blocks[l] @ part.block(l).T @ R
        np.testing.assert_allclose(P[l], ref, rtol=1e-7, atol=1e-9)


# --- classifier update ------------------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
def test_classifier_stationary_and_descent(seed):
    ds, model, codes, part, H = random_instance(seed)
    hp = model.hyper
    W = update_classifier(model, part, H)
    for l in range(model.class_count):
        A, B = model.P[l] @ part.block(l), model.P[l] @ part.complement(l)

        def f(M):
            return (np.sum((H.blocks[l] - M @ A) ** 2) + np.sum((M @ B) ** 2)
                    + hp.gamma * np.sum(M ** 2))

        g = num_grad(f, W[l])
        assert np.linalg.norm(g) <= 1e-5 * (1 + f(W[l]))
    before = objective(model, codes, part, H).total
    new = model.replace(W=W)
    after = objective(new, codes, part, H).total
    ridge = hp.lam * hp.gamma
    # the ridge-augmented objective decreases; the plain one rises by at most the old ridge
    assert after + ridge * np.sum(new.W_full ** 2) <= before + ridge * np.sum(model.W_full ** 2) + 1e-10
    assert after <= before + ridge * np.sum(model.W_full ** 2) + 1e-10


def test_classifier_identity_design():
    N = 4
    ds = LabeledDataset(np.eye(N), [0] * N, 1)
    part, H = partition(ds), one_hot(ds)
    hp = Hyperparams(k=N)
    model = AddlModel(D=[np.zeros((N, N))], P=[np.eye(N)], W=[np.zeros((1, N))], hyper=hp)
    W = update_classifier(model, part, H)
    assert np.linalg.norm(W[0] - H.blocks[0]) <= 2e-4 * np.linalg.norm(H.blocks[0])


def test_classifier_no_labels_gives_zero():
    ds, model, codes, part, H = random_instance(2)
    Z = LabelMatrix(H=None, blocks=[np.zeros_like(b) for b in H.blocks])
    assert all(np.all(w == 0) for w in update_classifier(model, part, Z))


# --- dictionary update -------------------------------------------------------------

@pytest.mark.parametrize("seed", range(6))
def test_dictionary_stationary(seed):
    ds, model, codes, part, H = random_instance(seed)
    hp = model.hyper
    D = update_dictionary(model, codes, part)
    for l in range(model.class_count):
        Xl, Sl, Sb = part.block(l), codes.S[l], codes.complement(l)

        def f(M):
            return (np.sum((Xl - M @ Sl) ** 2) + hp.alpha * np.sum((M @ Sb) ** 2)
                    + hp.gamma * np.sum(M ** 2))

        g = num_grad(f, D[l])
        assert np.linalg.norm(g) <= 1e-5 * (1 + f(D[l]))


def test_dictionary_identity_codes():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((5, 6))
    ds = LabeledDataset(X, [0, 0, 0, 1, 1, 1], 2)
    part = partition(ds)
    hp = Hyperparams(alpha=0.0, k=3)
    model, _ = init_model(2, 5, hp)
    codes = Codes(S=[np.eye(3), np.eye(3)], lam_diag=[np.ones(3)] * 2)
    D = update_dictionary(model, codes, part)
    for l in range(2):
        np.testing.assert_allclose(D[l], part.block(l) / (1 + hp.gamma), atol=1e-12)


def test_dictionary_alpha_zero_ignores_other_codes():
    ds, model, codes, part, H = random_instance(3, alpha=0.0)
    a = update_dictionary(model, codes, part)
    scrambled = Codes([s * 7.0 if j else s for j, s in enumerate(codes.S)], codes.lam_diag)
    b = update_dictionary(model, scrambled, part)
    np.testing.assert_allclose(a[0], b[0], rtol=1e-14)


def test_dictionary_projection_caps_atoms():
    ds, model, codes, part, H = random_instance(1, project_atoms=True)
    codes = Codes([s * 1e-3 for s in codes.S], codes.lam_diag)
    for D in update_dictionary(model, codes, part):
        assert np.all(np.linalg.norm(D, axis=0) <= 1 + 1e-12)


# --- training loop -------------------------------------------------------------------

def small_data(seed=0):
    return synth_generate(3, 4, 30, 20, 0.01, seed=seed, shift=3.0)


@pytest.mark.parametrize("seed", range(4))
def test_objective_monotone(seed):
    ds = small_data(seed)
    _, trace = train(ds, Hyperparams(seed=seed, max_iter=25, tol_obj=1e-12, tol_p=1e-12))
    tot = trace.totals
    assert np.all(tot[1:] <= tot[:-1] * (1 + 1e-9))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_monotone_random_small(seed):
    ds, *_ = random_instance(seed)
    hp = Hyperparams(alpha=0.3, tau=0.2, lam=0.1, k=3, seed=seed, max_iter=15,
                     tol_obj=1e-14, tol_p=1e-14)
    _, trace = train(ds, hp)
    tot = trace.totals
    assert np.all(tot[1:] <= tot[:-1] * (1 + 1e-9))


def test_max_iter_zero_returns_init():
    ds = small_data()
    hp = Hyperparams(max_iter=0, seed=3)
    model, trace = train(ds, hp)
    init, _ = init_model(3, ds.dim, hp)
    assert model.blocks_equal(init)
    assert trace.iterations == 0 and trace.records == []


def test_training_deterministic_and_parallel_identical():
    ds = small_data(1)
    hp = Hyperparams(seed=5, max_iter=10)
    a, ta = train(ds, hp)
    b, tb = train(ds, hp)
    p, tp = train(ds, hp, TrainOptions(parallel_classes=True, max_workers=3))
    assert a.blocks_equal(b) and a.blocks_equal(p)
    assert ta.totals.tobytes() == tp.totals.tobytes()


def test_class_permutation_equivariance():
    ds = small_data(2)
    hp = Hyperparams(seed=1, max_iter=8, tol_obj=1e-12, tol_p=1e-12)
    perm = np.array([2, 0, 1])  # new label of old class l is perm[l]
    init, codes = init_model(3, ds.dim, hp, class_sizes=ds.class_counts())
    inv = np.argsort(perm)
    pds = LabeledDataset(ds.features, perm[ds.labels], 3)
    # W rows index classes too
    pinit = AddlModel(D=[init.D[j] for j in inv], P=[init.P[j] for j in inv],
                      W=[init.W[j][inv] for j in inv], hyper=hp)
    pcodes = Codes([codes.S[j] for j in inv], [codes.lam_diag[j] for j in inv])
    a, _ = train(ds, hp, init=(init, codes))
    b, _ = train(pds, hp, init=(pinit, pcodes))
    for l in range(3):
        np.testing.assert_allclose(b.D[perm[l]], a.D[l], rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(b.P[perm[l]], a.P[l], rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(b.W[perm[l]][perm], a.W[l], rtol=1e-8, atol=1e-10)


def test_trace_csv(tmp_path):
    ds = small_data()
    _, trace = train(ds, Hyperparams(max_iter=4, tol_obj=1e-12, tol_p=1e-12))
    p = tmp_path / "trace.csv"
    trace.write_csv(p)
    rows = list(csv.reader(p.open()))
    assert rows[0] == list(TRACE_HEADER)
    assert rows[0][:2] == ["iter", "total"]
    assert len(rows) == 5
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3, 4]


def test_stop_reason_reported():
    ds = small_data()
    model, trace = train(ds, Hyperparams(max_iter=2, tol_obj=1e-14, tol_p=1e-14))
    assert trace.stop_reason == "max_iter" and model.iterations == 2
    model, trace = train(ds, Hyperparams(tol_obj=0.5))
    assert trace.stop_reason == "obj_tol"
