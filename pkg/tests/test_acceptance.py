"""Release acceptance gate: one test per shipping criterion.

Each test prints a single PASS/FAIL line with the measured quantities, so a
verbose run doubles as the acceptance report.  Every reference value comes
from a source independent of the library code: scipy's generalized
eigensolver, central finite differences, sort-free rank counting, analytic
chance levels, and raw byte comparison.

The two slowest checks share one session-scoped run of the default
experiment; expect this module to take several minutes.
"""

import json
import time

import numpy as np
import pytest
import scipy.linalg

from audioeeg import classifiers, corr, dataset, fileio, pipeline, retrieval


def _gate(num: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {num} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------
# independent oracles

def oracle_correlations(x, y, k, rx, ry):
    """Canonical correlations via scipy's generalized eigensolver on
    Sxy (Syy+ry I)^-1 Syx v = rho^2 (Sxx+rx I) v."""
    n = x.shape[0]
    xc, yc = x - x.mean(axis=0), y - y.mean(axis=0)
    sxx = xc.T @ xc / (n - 1) + rx * np.eye(x.shape[1])
    syy = yc.T @ yc / (n - 1) + ry * np.eye(y.shape[1])
    sxy = xc.T @ yc / (n - 1)
    a = sxy @ np.linalg.solve(syy, sxy.T)
    w = scipy.linalg.eigh(a, sxx, eigvals_only=True)[::-1]
    return np.sqrt(np.clip(w[:k], 0.0, 1.0))


def fd_grad(f, x, h=1e-5):
    """Central-difference gradient of scalar f at x, entry by entry."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def count_rank(scores: np.ndarray, j: int) -> int:
    """1-based rank of item j under descending score, ties by ascending id;
    counts better items instead of sorting."""
    return 1 + int((scores > scores[j]).sum()) + int((scores[:j] == scores[j]).sum())


def oracle_mrr1(score_matrix, relevant):
    total = 0.0
    for q in range(score_matrix.shape[0]):
        total += 1.0 / count_rank(score_matrix[q], relevant[q])
    return total / score_matrix.shape[0]


def oracle_map(score_matrix, relevance):
    total = 0.0
    for q in range(score_matrix.shape[0]):
        ranks = sorted(count_rank(score_matrix[q], j) for j in relevance[q])
        total += np.array([i / r for i, r in enumerate(ranks, start=1)]).mean()
    return total / score_matrix.shape[0]


def ranked_lists(score_matrix: np.ndarray) -> list[retrieval.RankedList]:
    ids = np.arange(score_matrix.shape[1])
    out = []
    for q, row in enumerate(score_matrix):
        order = np.lexsort((ids, -row))
        out.append(retrieval.RankedList(query_id=q, gallery_ids=ids[order],
                                        scores=row[order]))
    return out


# ---------------------------------------------------------------------------
# shared expensive artifact: one full default-configuration experiment

@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    cfg = pipeline.ExperimentConfig()
    t0 = time.perf_counter()
    bundle = pipeline.run_pipeline(cfg, tmp_path_factory.mktemp("default_run"))
    return bundle, time.perf_counter() - t0


class TestAcceptance:
    def test_criterion_1_cca_oracle_equivalence(self):
        """cca_fit matches a generalized-eigenproblem oracle on 50 random
        paired datasets (n <= 500, dims <= 30) within 1e-8, under 30 s."""
        rng = np.random.default_rng(101)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(50):
            dx, dy = (int(v) for v in rng.integers(2, 31, size=2))
            n = int(rng.integers(2 * max(dx, dy) + 3, 501))
            x = rng.normal(size=(n, dx))
            w = rng.normal(size=(dx, dy)) / np.sqrt(dx)
            y = x @ w + rng.normal(size=(n, dy)) * rng.uniform(0.3, 2.0)
            ridge = float(10.0 ** rng.uniform(-6, -1))
            k = int(rng.integers(1, min(dx, dy) + 1))
            model = corr.cca_fit(x, y, k=k, rx=ridge, ry=ridge)
            dev = np.abs(model.correlations
                         - oracle_correlations(x, y, k, ridge, ridge)).max()
            worst = max(worst, float(dev))
        elapsed = time.perf_counter() - t0
        _gate(1, "cca oracle equivalence", worst < 1e-8 and elapsed < 30.0,
              f"max deviation {worst:.2e} over 50 datasets, {elapsed:.1f}s")

    def test_criterion_2_dcca_gradient_check(self):
        """Analytic correlation-loss gradients match central finite
        differences (h = 1e-5) on 20 random batches within 1e-4, under 10 s."""
        rng = np.random.default_rng(202)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(20):
            n = int(rng.integers(8, 25))
            d1, d2 = (int(v) for v in rng.integers(2, 6, size=2))
            k = int(rng.integers(1, min(d1, d2) + 1))
            ridge = float(10.0 ** rng.uniform(-4, -2))
            h1 = rng.normal(size=(n, d1))
            h2 = rng.normal(size=(n, d2))
            _, g1, g2 = corr.dcca_loss_grad(h1, h2, k, ridge)
            for analytic, numeric in (
                (g1, fd_grad(lambda a: corr.dcca_loss_grad(a, h2, k, ridge)[0], h1)),
                (g2, fd_grad(lambda a: corr.dcca_loss_grad(h1, a, k, ridge)[0], h2)),
            ):
                rel = np.linalg.norm(analytic - numeric) / max(
                    np.linalg.norm(analytic), np.linalg.norm(numeric))
                worst = max(worst, float(rel))
        elapsed = time.perf_counter() - t0
        _gate(2, "dcca gradient check", worst < 1e-4 and elapsed < 10.0,
              f"max relative error {worst:.2e} over 20 batches, {elapsed:.1f}s")

    def test_criterion_3_metric_oracles(self):
        """MRR1/MAP equal a sort-free brute-force oracle exactly on 100
        random score matrices, and reproduce the 7/12 and 5/6 hand cases."""
        rng = np.random.default_rng(303)
        exact = True
        for i in range(100):
            q, m = (int(v) for v in rng.integers(2, 101, size=2))
            scores = rng.normal(size=(q, m))
            if i % 3 == 0:
                scores = np.round(scores, 1)  # exercise the tie rule
            lists = ranked_lists(scores)
            relevant = {j: int(rng.integers(m)) for j in range(q)}
            relevance = {
                j: set(rng.choice(m, size=int(rng.integers(1, min(m, 8) + 1)),
                                  replace=False).tolist())
                for j in range(q)
            }
            exact &= retrieval.mrr1(lists, relevant) == oracle_mrr1(scores, relevant)
            exact &= (retrieval.map_score(lists, relevance)
                      == oracle_map(scores, relevance))
        # relevant item at ranks 1, 2 and 4  ->  (1 + 1/2 + 1/4) / 3 = 7/12
        hand_mrr = retrieval.mrr1(
            ranked_lists(np.array([[9.0, 3.0, 2.0, 1.0],
                                   [3.0, 9.0, 2.0, 1.0],
                                   [0.0, 9.0, 5.0, 3.0]])),
            {0: 0, 1: 0, 2: 0})
        # two relevant items at ranks 1 and 3  ->  mean(1, 2/3) = 5/6
        hand_map = retrieval.map_score(
            ranked_lists(np.array([[9.0, 5.0, 3.0, 1.0]])), {0: {0, 2}})
        hands = hand_mrr == 7 / 12 and hand_map == np.mean([1.0, 2 / 3])
        _gate(3, "metric oracles", exact and hands,
              f"exact on 100 matrices: {exact}; hand cases "
              f"{hand_mrr:.6f}=7/12, {hand_map:.6f}=5/6: {hands}")

    def test_criterion_4_fusion_ordering(self, default_run):
        """On the default corpus, fused accuracy beats each single modality
        by >= 5 points averaged over 10 folds; the full run stays under
        10 minutes."""
        bundle, elapsed = default_run
        acc = bundle.accuracies
        lead_audio = acc["fused"] - acc["audio"]
        lead_eeg = acc["fused"] - acc["eeg"]
        folds = len(bundle.per_fold_accuracies["fused"])
        ok = (lead_audio >= 0.05 and lead_eeg >= 0.05 and folds == 10
              and elapsed < 600.0)
        _gate(4, "fusion ordering", ok,
              f"audio {acc['audio']:.3f}, eeg {acc['eeg']:.3f}, fused "
              f"{acc['fused']:.3f}; leads +{lead_audio:.3f}/+{lead_eeg:.3f} "
              f"over {folds} folds; run {elapsed:.0f}s")

    def test_criterion_5_method_ordering(self):
        """On the category-clustered corpus (category structure dominates the
        per-segment shared signal), C-DCCA beats CCA on both MRR1 and MAP at
        every component count, with all seeds fixed."""
        master = 7
        man = dataset.DatasetManifest()
        gen = dataset.GenConfig(
            latent_dim_shared=2, latent_dim_audio_only=6, latent_dim_eeg_only=6,
            sigma_audio=2.0, sigma_eeg=4.0, sigma_subject=2.5,
            seed=pipeline.derive_seed(master, pipeline.STAGE_GEN))
        audio, eeg = dataset.generate_synthetic(man, gen)
        plan = dataset.stratified_folds(
            man, 10, pipeline.derive_seed(master, pipeline.STAGE_FOLDS))
        ks = [10, 15, 20, 25, 30, 35, 40]
        folds = (0, 1, 2, 3, 4)

        cca_spaces, cd_spaces, fold_data = [], [], []
        for fold in folds:
            audio_tr, audio_te = dataset.split(audio, plan, fold)
            eeg_tr, eeg_te = dataset.split(eeg, plan, fold)
            x, y, labels = pipeline.paired_training_rows(audio_tr, eeg_tr)
            head = corr.cca_fit(x, y, k=40,
                                rx=16.0 * float(x.var(axis=0).mean()),
                                ry=16.0 * float(y.var(axis=0).mean()))
            cca_spaces.append(corr.SharedSpace(head=head))
            dcfg = corr.DccaConfig(
                hidden=(192,), out_dim=40, ridge=1e-4, epochs=600,
                learning_rate=0.1, momentum=0.9, category_pair_prob=0.75,
                seed=pipeline.derive_seed(master, pipeline.STAGE_CDCCA, fold))
            enc_x, enc_y, cd_head, _ = corr.dcca_fit(x, y, dcfg, labels=labels)
            cd_spaces.append(corr.SharedSpace(cd_head, enc_x, enc_y))
            fold_data.append(pipeline.fold_retrieval_data(audio_te, eeg_te))

        linear = retrieval.sweep_components(cca_spaces, fold_data, ks, "cosine")
        deep = retrieval.sweep_components(cd_spaces, fold_data, ks, "cosine")
        mrr_margin = deep.mrr1_mean - linear.mrr1_mean
        map_margin = deep.map_mean - linear.map_mean
        ok = bool((mrr_margin > 0).all() and (map_margin > 0).all())
        _gate(5, "method ordering", ok,
              f"MRR1 margins {np.round(mrr_margin, 4).tolist()}, "
              f"MAP margins {np.round(map_margin, 4).tolist()} over folds {folds}")

    def test_criterion_6_component_insensitivity(self, default_run):
        """CCA retrieval is nearly flat across component counts: MRR1
        max-min spread below 0.05."""
        bundle, _ = default_run
        mrr = bundle.retrieval["cca"].mrr1_mean
        spread = float(mrr.max() - mrr.min())
        _gate(6, "component insensitivity", spread < 0.05,
              f"CCA MRR1 {np.round(mrr, 3).tolist()}, spread {spread:.4f}")

    def test_criterion_7_chance_level_sanity(self):
        """With shuffled pairings at the real fold geometry (720 EEG queries
        over 16 audios, 16 audio queries over 720 recordings), MRR1 sits
        within 0.03 of H(16)/16 and MAP within 0.02 of 45/720."""
        rng = np.random.default_rng(404)
        audio = rng.normal(size=(16, 12))
        eeg = rng.normal(size=(720, 12))
        eeg_segments = np.repeat(np.arange(16), 45)
        ranked_eeg = [retrieval.rank_gallery(eeg[q], audio, query_id=q)
                      for q in range(720)]
        ranked_audio = [retrieval.rank_gallery(audio[q], eeg, query_id=q)
                        for q in range(16)]
        mrr_vals, map_vals = [], []
        for _ in range(300):
            perm = rng.permutation(16)
            relevant = {q: int(perm[eeg_segments[q]]) for q in range(720)}
            mrr_vals.append(retrieval.mrr1(ranked_eeg, relevant))
            relevance = {q: set(range(45 * s, 45 * (s + 1)))
                         for q, s in enumerate(rng.permutation(16))}
            map_vals.append(retrieval.map_score(ranked_audio, relevance))
        mrr_mean = float(np.mean(mrr_vals))
        map_mean = float(np.mean(map_vals))
        chance_mrr = sum(1.0 / r for r in range(1, 17)) / 16  # H(16)/16
        chance_map = 45 / 720
        ok = (abs(mrr_mean - chance_mrr) <= 0.03
              and abs(map_mean - chance_map) <= 0.02)
        _gate(7, "chance-level sanity", ok,
              f"MRR1 {mrr_mean:.4f} vs {chance_mrr:.4f}, "
              f"MAP {map_mean:.4f} vs {chance_map:.4f}, 300 shuffles")

    def test_criterion_8_svm_correctness(self):
        """After SMO, every training point satisfies its KKT condition
        within tol; separable data and the rbf XOR problem both reach
        training accuracy 1.0."""
        rng = np.random.default_rng(505)
        centers = np.array([[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 4.0]])
        x_sep = np.vstack([c + 0.3 * rng.normal(size=(25, 2)) for c in centers])
        y_sep = np.repeat(np.arange(4), 25)
        sep = classifiers.svm_fit(x_sep, y_sep, classifiers.SvmConfig(
            kernel=classifiers.KernelSpec("rbf"), c_reg=10.0, tol=1e-3))
        sep_acc = float((classifiers.predict(sep, x_sep) == y_sep).mean())
        sep_res = float(sep.kkt_residuals.max())

        x_xor = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]] * 5)
        x_xor = x_xor + 0.05 * rng.normal(size=x_xor.shape)
        y_xor = np.array([0, 0, 1, 1] * 5)
        xor = classifiers.svm_fit(x_xor, y_xor, classifiers.SvmConfig(
            kernel=classifiers.KernelSpec("rbf", gamma=1.0), c_reg=10.0, tol=1e-3))
        xor_acc = float((classifiers.predict(xor, x_xor) == y_xor).mean())
        xor_res = float(xor.kkt_residuals.max())

        # overlapping classes force bounded support vectors
        x_mix = np.vstack([rng.normal(size=(40, 3)),
                           0.8 + rng.normal(size=(40, 3))])
        y_mix = np.repeat([0, 1], 40)
        mix = classifiers.svm_fit(x_mix, y_mix, classifiers.SvmConfig(
            kernel=classifiers.KernelSpec("rbf"), c_reg=1.0, tol=1e-3))
        mix_res = float(mix.kkt_residuals.max())

        ok = (sep_acc == 1.0 and xor_acc == 1.0
              and max(sep_res, xor_res, mix_res) <= 1e-3)
        _gate(8, "svm correctness", ok,
              f"separable acc {sep_acc:.3f}, xor acc {xor_acc:.3f}, "
              f"worst KKT residual {max(sep_res, xor_res, mix_res):.2e} "
              f"vs tol 1e-3")

    def test_criterion_9_determinism(self, tmp_path):
        """Two identically configured runs write byte-identical numeric
        artifacts; feature files round-trip bit-exactly at their closed-form
        size of 24 + rows*cols*8 bytes."""
        man = dataset.build_manifest(
            categories=("kick", "snare", "hat", "tom"), n_segments=16,
            n_subjects=2, n_reps=2, audio_dim=24, eeg_dim=16)
        cfg = pipeline.ExperimentConfig(
            manifest=man,
            gen=dataset.GenConfig(latent_dim_shared=2, latent_dim_audio_only=2,
                                  latent_dim_eeg_only=2, sigma_audio=0.8,
                                  sigma_eeg=0.8, sigma_subject=0.5),
            n_folds=4, pca_dim=5,
            dcca=corr.DccaConfig(hidden=(8,), out_dim=6, epochs=8,
                                 learning_rate=0.05),
            cdcca=corr.DccaConfig(hidden=(8,), out_dim=6, epochs=8,
                                  learning_rate=0.05, category_pair_prob=0.5),
            ks=(2, 4, 6), master_seed=3)
        pipeline.run_pipeline(cfg, tmp_path / "a")
        pipeline.run_pipeline(cfg, tmp_path / "b")

        files_a = sorted(p.relative_to(tmp_path / "a")
                         for p in (tmp_path / "a").rglob("*") if p.is_file())
        files_b = sorted(p.relative_to(tmp_path / "b")
                         for p in (tmp_path / "b").rglob("*") if p.is_file())
        same_sets = files_a == files_b
        identical = same_sets
        for rel in files_a if same_sets else []:
            a_bytes = (tmp_path / "a" / rel).read_bytes()
            b_bytes = (tmp_path / "b" / rel).read_bytes()
            if rel.name == "summary.json":
                da, db = json.loads(a_bytes), json.loads(b_bytes)
                for d in (da, db):  # wall-clock metadata may differ
                    d["meta"].pop("runtime_seconds")
                    d["meta"].pop("timestamp")
                identical &= da == db
            else:
                identical &= a_bytes == b_bytes

        audio, _ = dataset.generate_synthetic(man, cfg.gen)
        path = tmp_path / "audio.fmtx"
        dataset.write_features(path, audio)
        size_ok = (path.stat().st_size
                   == fileio.matrix_file_size(len(audio), man.audio_dim)
                   == 24 + len(audio) * man.audio_dim * 8)
        reloaded = dataset.load_features(path)
        round_trip = (reloaded.matrix.tobytes() == audio.matrix.tobytes()
                      and np.array_equal(reloaded.segment_ids, audio.segment_ids)
                      and np.array_equal(reloaded.category_ids, audio.category_ids))

        ok = same_sets and identical and size_ok and round_trip
        _gate(9, "determinism", ok,
              f"{len(files_a)} artifacts byte-identical: {identical}; "
              f"feature file {path.stat().st_size} bytes matches formula: "
              f"{size_ok}; bit-exact round trip: {round_trip}")
