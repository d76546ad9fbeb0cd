import math

import numpy as np
import pytest

from fnlabel.corpus import Corpus, FunctionRecord, TaintInfo
from fnlabel.featurizer import (SparseVec, categorical_features,
                                context_vectors, embed, embed_corpus,
                                featurize_corpus, load_external_embeddings,
                                minhash_signature, opcode_shingles,
                                quantitative_features, reachable_fids,
                                save_embeddings, sparse_mean)
from fnlabel.kernels import minhash_sig


def rec(name, binary="b0", vaddr=None, **kw):
    kw.setdefault("opcodes", ["push", "mov", "ret"])
    return FunctionRecord(binary_id=binary, name=name,
                          vaddr=vaddr if vaddr is not None else 0x1000,
                          size=kw.pop("size", 16), **kw)


def chain_corpus(names, binary="b0"):
    recs = []
    for i, name in enumerate(names):
        callees = [names[i + 1]] if i + 1 < len(names) else []
        callers = [names[i - 1]] if i > 0 else []
        recs.append(rec(name, binary=binary, vaddr=0x1000 + 32 * i,
                        callees=callees, callers=callers))
    return Corpus(recs)


def test_quantitative_slots():
    r = rec("f", callers=["a", "b", "c"], callees=["x", "y"],
            stack_bytes=64, local_bytes=16, num_args=3,
            constants=[1, 2], cfg_nodes=4, cfg_edges=5,
            opcodes=["push", "mov", "mov", "jle", "call", "ret"],
            taint=TaintInfo(reg_onehot=[0, 1, 0, 0, 0, 0, 0, 1],
                            cond_jumps=2, flows=1))
    q = quantitative_features(r)
    assert q.shape == (512,)
    assert (q[10], q[11]) == (3, 2)
    assert (q[18], q[22]) == (64, 16)
    assert q[0] == 16 and q[1] == 6
    assert q[2 + 2] == 1          # jle: signed compare class
    assert q[2 + 6] == 1 and q[2 + 7] == 1
    assert q[21] == 3 and q[23] == 2
    assert q[14] == 4 and q[15] == 5
    assert q[16] == pytest.approx(2.5) and q[17] == 3
    assert q[24] == 5
    assert q[25 + 1] == 1 and q[25 + 7] == 1
    assert q[36] == 2 and q[37] == 1
    assert np.isfinite(q).all()


def test_quantitative_empty_opcodes():
    q = quantitative_features(rec("f", opcodes=[]))
    assert q[1] == 0
    assert not q[2:10].any()


def test_reachable_bfs_cycle_and_cap():
    corpus = chain_corpus([f"f{i}" for i in range(40)])
    root = corpus.by_fid["b0:f0"]
    assert len(reachable_fids(corpus, root)) == 32
    q = quantitative_features(root, corpus)
    assert q[13] == 32

    a = rec("a", callees=["b"], vaddr=0x100)
    b = rec("b", callees=["a"], vaddr=0x200)
    cyc = Corpus([a, b])
    assert reachable_fids(cyc, a) == {"b0:b"}


def test_categorical_deterministic_and_seed_sensitive():
    r = rec("f", opcodes=["push", "mov", "add", "sub", "ret"],
            constants=[7], dynamic_callees=["memcpy"])
    c1 = categorical_features(r, D=1 << 12, seed=5)
    c2 = categorical_features(r, D=1 << 12, seed=5)
    assert np.array_equal(c1.indices, c2.indices)
    assert np.array_equal(c1.values, c2.values)
    c3 = categorical_features(r, D=1 << 12, seed=6)
    assert not (np.array_equal(c1.indices, c3.indices)
                and np.array_equal(c1.values, c3.values))
    assert np.all(c1.indices[1:] > c1.indices[:-1])
    assert c1.values.dtype == np.float64
    assert np.array_equal(c1.values, np.round(c1.values))


def test_categorical_requires_power_of_two():
    with pytest.raises(ValueError, match="power of two"):
        categorical_features(rec("f"), D=1000)


def test_identical_opcodes_share_digest_and_signature():
    ops = ["push", "mov", "add", "xor", "cmp", "jne", "ret"]
    s1 = minhash_signature(ops, seed=3)
    s2 = minhash_signature(list(ops), seed=3)
    assert np.array_equal(s1, s2)
    r1 = rec("f", opcodes=ops)
    r2 = rec("g", opcodes=list(ops))
    c1 = categorical_features(r1, D=1 << 12, seed=3)
    c2 = categorical_features(r2, D=1 << 12, seed=3)
    assert np.array_equal(c1.indices, c2.indices)
    assert np.array_equal(c1.values, c2.values)


def test_no_constants_no_callees_only_opcode_tokens():
    r = rec("f", opcodes=["push", "mov", "add", "sub", "ret"])
    c = categorical_features(r, D=1 << 18, seed=0)
    # exact digest + 64 minhash tokens, some possibly colliding
    assert 1 <= c.nnz <= 65
    assert abs(c.values).sum() <= 65


def _binom_bounds(n, p, alpha=0.01):
    probs = [math.comb(n, x) * p ** x * (1 - p) ** (n - x)
             for x in range(n + 1)]
    cdf = 0.0
    lo, hi = 0, n
    for x in range(n + 1):
        cdf += probs[x]
        if cdf <= alpha / 2:
            lo = x + 1
        if cdf >= 1 - alpha / 2:
            hi = x
            break
    return lo, hi


def test_minhash_match_rate_tracks_jaccard():
    # 3 of 4 shingles shared -> J = 0.75
    ops_a = ["a", "b", "c", "d", "e", "f", "g"]
    ops_b = ["b", "c", "d", "e", "f", "g"]
    sha = set(opcode_shingles(ops_a, seed=1).tolist())
    shb = set(opcode_shingles(ops_b, seed=1).tolist())
    assert len(sha & shb) == 3 and len(sha | shb) == 4
    sig_a = minhash_signature(ops_a, seed=1)
    sig_b = minhash_signature(ops_b, seed=1)
    matches = int((sig_a == sig_b).sum())
    lo, hi = _binom_bounds(64, 0.75)
    assert lo <= matches <= hi


def test_minhash_converges_at_large_m():
    import random as pyrandom
    rng = pyrandom.Random(99)
    universe = [rng.getrandbits(64) for _ in range(40)]
    a_set = np.array(sorted(universe[:20]), dtype=np.uint64)
    b_set = np.array(sorted(universe[10:30]), dtype=np.uint64)
    jaccard = 10 / 30
    m = 512
    pa = np.array([rng.getrandbits(64) | 1 for _ in range(m)], np.uint64)
    pb = np.array([rng.getrandbits(64) for _ in range(m)], np.uint64)
    sig_a = np.zeros(m, dtype=np.uint64)
    sig_b = np.zeros(m, dtype=np.uint64)
    minhash_sig(a_set, pa, pb, sig_a)
    minhash_sig(b_set, pa, pb, sig_b)
    frac = (sig_a == sig_b).mean()
    assert abs(frac - jaccard) <= 0.05


def test_context_vectors_hand_mean():
    a = rec("a", vaddr=0x100, callees=["f"], stack_bytes=8)
    f = rec("f", vaddr=0x200, callers=["a"], callees=["c"], num_args=2)
    c = rec("c", vaddr=0x300, callers=["f"], heap_bytes=32,
            opcodes=["push", "call", "ret"])
    corpus = Corpus([a, f, c])
    fmap = {r.fid: (quantitative_features(r, corpus),
                    categorical_features(r, D=1 << 12, seed=0,
                                         corpus=corpus))
            for r in corpus}
    ctx = context_vectors(corpus, fmap)
    gq, gc, hq, hc = ctx["b0:f"]
    want_q = (fmap["b0:a"][0] + fmap["b0:c"][0]) / 2
    assert np.allclose(gq, want_q, atol=0, rtol=0)
    want_dense = (fmap["b0:a"][1].to_dense() + fmap["b0:c"][1].to_dense()) / 2
    assert np.allclose(gc.to_dense(), want_dense)
    all_q = np.mean([fmap[r.fid][0] for r in corpus], axis=0)
    assert np.allclose(hq, all_q)


def test_isolated_function_gets_zero_context():
    lone = rec("lone")
    corpus = Corpus([lone])
    feats = featurize_corpus(corpus, D=1 << 12, seed=0)
    ff = feats["b0:lone"]
    assert not ff.gq.any() and ff.gc.nnz == 0
    # single-function binary: h equals f
    assert np.array_equal(ff.hq, ff.q)
    assert np.array_equal(ff.hc.to_dense(), ff.c.to_dense())


def _random_features(rng, Q=64, D=1 << 10):
    q = np.round(rng.uniform(-3, 3, Q) * (rng.random(Q) < 0.4), 3)
    dense_c = np.round(rng.uniform(-2, 2, D) * (rng.random(D) < 0.02))
    idx = np.nonzero(dense_c)[0].astype(np.int64)
    c = SparseVec(idx, dense_c[idx].astype(np.float64), D)
    zq = np.zeros(Q)
    zc = SparseVec.empty(D)
    from fnlabel.featurizer import FunctionFeatures
    return FunctionFeatures(q=q, c=c, gq=zq.copy(), gc=zc,
                            hq=q * 0.5, hc=c)


def test_embed_zero_and_linearity():
    rng = np.random.default_rng(42)
    from fnlabel.featurizer import FunctionFeatures
    zero = FunctionFeatures(
        q=np.zeros(64), c=SparseVec.empty(1 << 10),
        gq=np.zeros(64), gc=SparseVec.empty(1 << 10),
        hq=np.zeros(64), hc=SparseVec.empty(1 << 10))
    assert not embed(zero, 32, seed=1).any()

    x = _random_features(rng)
    y = _random_features(rng)

    def add(u, v):
        from fnlabel.featurizer import FunctionFeatures

        def sadd(a, b):
            dense = a.to_dense() + b.to_dense()
            idx = np.nonzero(dense)[0].astype(np.int64)
            return SparseVec(idx, dense[idx], a.width)
        return FunctionFeatures(q=u.q + v.q, c=sadd(u.c, v.c),
                                gq=u.gq + v.gq, gc=sadd(u.gc, v.gc),
                                hq=u.hq + v.hq, hc=sadd(u.hc, v.hc))

    lhs = embed(add(x, y), 48, seed=9)
    rhs = embed(x, 48, seed=9) + embed(y, 48, seed=9)
    assert np.allclose(lhs, rhs, atol=1e-9)


def test_embed_distortion_within_jl_bound():
    rng = np.random.default_rng(7)
    pairs = [( _random_features(rng), _random_features(rng))
             for _ in range(100)]
    worst = 0.0
    total = 0.0
    for x, y in pairs:
        full = 0.0
        for ax, ay in ((x.q, y.q), (x.gq, y.gq), (x.hq, y.hq)):
            full += float(((ax - ay) ** 2).sum())
        for sx, sy in ((x.c, y.c), (x.gc, y.gc), (x.hc, y.hc)):
            full += float(((sx.to_dense() - sy.to_dense()) ** 2).sum())
        full = math.sqrt(full)
        ex = embed(x, 512, seed=3)
        ey = embed(y, 512, seed=3)
        got = float(np.linalg.norm(ex - ey))
        distortion = abs(got / full - 1.0)
        worst = max(worst, distortion)
        total += distortion
    assert worst < 0.35
    assert total / len(pairs) < 0.10


def test_sparse_mean_of_nothing_is_empty():
    assert sparse_mean([], 16).nnz == 0


def test_embed_corpus_deterministic():
    corpus = chain_corpus(["alpha", "beta", "gamma"])
    e1 = embed_corpus(corpus, E=16, Q=64, D=1 << 12, seed=11)
    e2 = embed_corpus(corpus, E=16, Q=64, D=1 << 12, seed=11)
    assert sorted(e1) == sorted(e2)
    for fid in e1:
        assert np.array_equal(e1[fid], e2[fid])
    e3 = embed_corpus(corpus, E=16, Q=64, D=1 << 12, seed=12)
    assert any(not np.array_equal(e1[f], e3[f]) for f in e1)


def test_embeddings_file_round_trip(tmp_path):
    corpus = chain_corpus(["alpha", "beta"])
    embs = embed_corpus(corpus, E=8, Q=64, D=1 << 12, seed=2)
    path = tmp_path / "emb.txt"
    save_embeddings(embs, path)
    back = load_external_embeddings(path, E=8)
    assert sorted(back) == sorted(embs)
    for fid in embs:
        assert np.array_equal(back[fid], embs[fid])


def test_external_embedding_errors(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("b0:f 1.0 2.0\nb0:g 1.0 2.0 3.0\n")
    with pytest.raises(ValueError, match="'b0:g' has width 3"):
        load_external_embeddings(path, E=2)
    path.write_text("b0:f 1.0 2.0\nb0:f 3.0 4.0\n")
    with pytest.raises(ValueError, match="duplicate function 'b0:f'"):
        load_external_embeddings(path, E=2)
    path.write_text("b0:f 1.0 2.0\n")
    with pytest.raises(ValueError, match="unknown function 'b0:f'"):
        load_external_embeddings(path, E=2, known_fids={"b0:g"})
    path.write_text("\n")
    assert load_external_embeddings(path, E=2) == {}


def test_external_width_100_loads(tmp_path):
    path = tmp_path / "emb.txt"
    vec = " ".join(str(float(i)) for i in range(100))
    path.write_text(f"b0:f {vec}\nb0:g {vec}\n")
    out = load_external_embeddings(path, E=100)
    assert len(out) == 2 and out["b0:f"].shape == (100,)
