import math

import numpy as np
import pytest
from scipy import stats
from scipy.optimize import linprog

import ssrem

nltk_bleu = pytest.importorskip("nltk.translate.bleu_score")

PAIRS = [
    ("yeah let's go to the theater", "the weather is no good for walking"),
    ("the cat sat on the mat", "the cat is on the mat"),
    ("i love you", "i love you too"),
    ("let's go to the movie theater tonight", "go to the movie tonight"),
    ("hello world", "hello"),
]


def test_bleu_matches_nltk():
    sf = nltk_bleu.SmoothingFunction()
    for ref, cand in PAIRS:
        r, c = ref.split(), cand.split()
        expected = nltk_bleu.sentence_bleu([r], c, smoothing_function=sf.method7)
        assert ssrem.bleu(r, c) == pytest.approx(expected, abs=1e-12)


def test_rouge_table_values():
    ref = ssrem.tokenize("yeah let's go to the theater")
    assert round(ssrem.rouge_l(ref, ssrem.tokenize("the weather is no good for walking")), 2) == 0.15
    assert round(ssrem.rouge_l(ref, ssrem.tokenize("the sight is extra beautiful here")), 2) == 0.17
    with pytest.raises(ValueError):
        ssrem.rouge_l([], ["a"])


def random_table(rng, words, dim=5):
    table = ssrem.EmbeddingTable(dim)
    for w in words:
        table.add(w, list(rng.normal(size=dim)))
    return table


def test_transport_matches_linprog():
    rng = np.random.default_rng(3)
    for m, n in [(2, 3), (4, 4), (5, 2)]:
        a = rng.random(m)
        a /= a.sum()
        b = rng.random(n)
        b /= b.sum()
        cost = rng.random((m, n))
        eq = np.zeros((m + n, m * n))
        for i in range(m):
            eq[i, i * n:(i + 1) * n] = 1
        for j in range(n):
            eq[m + j, j::n] = 1
        ref = linprog(cost.ravel(), A_eq=eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
        got, flow = ssrem.solve_transport(a, b, cost)
        assert got == pytest.approx(ref.fun, abs=1e-9)
        assert flow.sum(axis=1) == pytest.approx(a)


def test_embedding_metrics():
    rng = np.random.default_rng(0)
    words = ["a", "b", "c", "d"]
    table = random_table(rng, words)
    ref, cand = ["a", "b", "b"], ["c", "d"]
    va = np.mean([table.vector(w) for w in ref], axis=0)
    vb = np.mean([table.vector(w) for w in cand], axis=0)
    assert ssrem.emb_average(table, ref, cand) == pytest.approx(va @ vb / np.linalg.norm(va) / np.linalg.norm(vb))
    assert ssrem.mover_similarity(ref, ref, table) == pytest.approx(1.0)
    d = ssrem.mover_distance(ref, cand, table, "sms")
    assert d == pytest.approx(np.linalg.norm(va - vb))
    assert ssrem.mover_similarity(ref, cand, table) == pytest.approx(math.exp(-ssrem.mover_distance(ref, cand, table)))


def test_statistics_match_scipy():
    rng = np.random.default_rng(1)
    x = rng.normal(size=40)
    y = 0.3 * x + rng.normal(size=40)
    r, p = ssrem.pearson(x, y)
    ref = stats.pearsonr(x, y)
    assert r == pytest.approx(ref[0], abs=1e-12)
    assert p == pytest.approx(ref[1], abs=1e-10)
    rho, p = ssrem.spearman(np.round(x, 1), np.round(y, 1))
    ref = stats.spearmanr(np.round(x, 1), np.round(y, 1))
    assert rho == pytest.approx(ref[0], abs=1e-12)
    assert p == pytest.approx(ref[1], abs=1e-10)
    assert ssrem.t_two_sided_p(2.0, 10) == pytest.approx(2 * stats.t.sf(2.0, 10), abs=1e-12)
    slope, intercept = ssrem.linear_fit(x, y)
    ref = stats.linregress(x, y)
    assert slope == pytest.approx(ref.slope) and intercept == pytest.approx(ref.intercept)
    assert abs(ssrem.permutation_p_value(x, y, 10000, 0) - stats.pearsonr(x, y)[1]) < 0.02


def test_fleiss_kappa_matches_statsmodels():
    inter_rater = pytest.importorskip("statsmodels.stats.inter_rater")
    table = [[0, 0, 0, 0, 14], [0, 2, 6, 4, 2], [0, 0, 3, 5, 6], [0, 3, 9, 2, 0], [2, 2, 8, 1, 1],
             [7, 7, 0, 0, 0], [3, 2, 6, 3, 0], [2, 5, 3, 2, 2], [6, 5, 2, 1, 0], [0, 2, 2, 3, 7]]
    assert ssrem.fleiss_kappa(table) == pytest.approx(inter_rater.fleiss_kappa(np.array(table)), abs=1e-12)


def test_gradient_finite_differences():
    rng = np.random.default_rng(2)
    d = 6
    M = np.eye(d) + 0.1 * rng.normal(size=(d, d))
    c = rng.normal(size=d)
    cands = rng.normal(size=(4, d)) / math.sqrt(d)
    loss, grad = ssrem.loss_and_gradient(M, c, cands, 1)
    f = np.tanh(cands @ M.T @ c)
    assert loss == pytest.approx(-(f[1] - np.log(np.exp(f).sum())))
    h = 1e-6
    num = np.zeros_like(M)
    for i in range(d):
        for j in range(d):
            P, N = M.copy(), M.copy()
            P[i, j] += h
            N[i, j] -= h
            num[i, j] = (ssrem.loss_and_gradient(P, c, cands, 1)[0] - ssrem.loss_and_gradient(N, c, cands, 1)[0]) / (2 * h)
    assert np.max(np.abs(num - grad)) < 1e-7
    assert ssrem.candidate_probability(M, c, cands) == pytest.approx(np.exp(f) / np.exp(f).sum())


def test_training_round_trip_and_determinism(tmp_path):
    spec = {"n_communities": 4, "community_size": 3, "lexicon": 200, "d": 8}
    corpus, table, splits, responses = ssrem.synth_corpus(spec)
    assert responses and all(1 <= r["human"] <= 5 for r in responses)
    config = {"optimizer": {"max_epochs": 3, "batch_size": 8}}
    a, epochs = ssrem.train(splits["train"], splits["valid"], table, "ssrem", config, 1)
    b, _ = ssrem.train(splits["train"], splits["valid"], table, "ssrem", config, 4)
    assert a.to_string() == b.to_string()
    assert len(epochs) <= 3
    path = tmp_path / "params.json"
    a.save(str(path))
    back = ssrem.ModelParams.load(str(path))
    assert np.array_equal(back.M, a.M)
    assert back.f_bounds == a.f_bounds
    accuracy, means = ssrem.identify(corpus, splits["test"], table, back)
    assert 0.0 <= accuracy <= 1.0
    assert set(means) <= {"GT", "SC", "SP", "SS", "Rand"}
    scorer = ssrem.Scorer(table, back)
    conv = splits["test"][0]["turns"]
    s = scorer.score([conv[0]["text"]], conv[1]["text"], conv[1]["text"])
    assert 0.0 <= s <= 1.0
