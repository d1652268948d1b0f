import numpy as np
import pytest
import torch

from motiondrift.errors import ConfigurationError, InvalidInputError
from motiondrift.model import ModelConfig, init_model
from motiondrift.training import (
    DataSplit,
    TrainConfig,
    TrialRecord,
    ValidationReport,
    alternate_query_reference,
    hyperparameter_search,
    make_split,
    mine_batch,
    precision_at_1,
    r_precision,
    train,
    triplet_loss,
    write_trial_log,
)

from conftest import (
    noisy_cohort_train_val,
    oracle_precision_at_1,
    oracle_r_precision,
    small_cohort_train_val,
    small_cohort_windows,
)

SMALL_MODEL = ModelConfig(embedding_dim=16, gru_layers=1, gru_hidden=16,
                          tf_layers=1, tf_heads=2, tf_ff_dim=32,
                          frame_dropout_p=0.05, seed=7)


class TestMakeSplit:
    def test_nine_five_seven(self):
        users = [f"p{i:02d}" for i in range(21)]
        split = make_split(users, (9, 5, 7), seed=3)
        assert len(split.train_users) == 9
        assert len(split.val_users) == 5
        assert len(split.test_users) == 7
        all_assigned = set(split.train_users) | set(split.val_users) | set(split.test_users)
        assert len(all_assigned) == 21

    def test_same_seed_identical(self):
        users = [f"p{i}" for i in range(12)]
        assert make_split(users, (6, 3, 3), seed=5) == make_split(users, (6, 3, 3), seed=5)

    def test_empty_subset_rejected(self):
        with pytest.raises(ConfigurationError):
            make_split(["a", "b", "c", "d"], (3, 0, 1), seed=0)

    def test_insufficient_users_rejected(self):
        with pytest.raises(ConfigurationError):
            make_split(["a", "b", "c"], (2, 1, 1), seed=0)

    def test_datasplit_disjointness_enforced(self):
        with pytest.raises(ConfigurationError):
            DataSplit(("a", "b"), ("b",), ("c",))


class TestTripletLoss:
    def test_satisfied_margin_is_zero(self):
        assert triplet_loss(0.2, 1.0, 0.5) == 0.0

    def test_violated_margin(self):
        assert triplet_loss(0.8, 0.9, 0.5) == pytest.approx(0.4)

    def test_boundary_zero_margin(self):
        assert triplet_loss(0.7, 0.7, 0.0) == 0.0

    def test_negative_distance_rejected(self):
        with pytest.raises(InvalidInputError):
            triplet_loss(-0.1, 1.0, 0.2)

    def test_nonnegative_property(self, rng):
        for _ in range(200):
            d_ap, d_an, m = rng.uniform(0, 3, size=3)
            loss = triplet_loss(d_ap, d_an, m)
            assert loss >= 0.0
            if d_an >= d_ap + m:
                assert loss == 0.0


class TestMineBatch:
    def test_hand_placed_hardest_triplets(self):
        emb = np.array([[0.0, 0.0],   # a0 (user A)
                        [1.0, 0.0],   # a1 (user A)
                        [0.4, 0.0],   # b0 (user B)
                        [5.0, 0.0]])  # b1 (user B)
        labels = ["A", "A", "B", "B"]
        triples = mine_batch(emb, labels)
        # brute-force verification: farthest positive, nearest negative
        d2 = np.sum((emb[:, None] - emb[None, :]) ** 2, axis=-1)
        want = []
        for i in range(4):
            same = [j for j in range(4) if labels[j] == labels[i] and j != i]
            other = [j for j in range(4) if labels[j] != labels[i]]
            pos = max(same, key=lambda j: d2[i, j])
            neg = min(other, key=lambda j: d2[i, j])
            want.append((i, pos, neg))
        assert triples == want

    def test_identical_embeddings_loss_equals_margin(self):
        emb = np.ones((6, 3))
        labels = ["A", "A", "A", "B", "B", "B"]
        m = 0.25
        for a, p, n in mine_batch(emb, labels):
            d_ap = float(np.linalg.norm(emb[a] - emb[p]))
            d_an = float(np.linalg.norm(emb[a] - emb[n]))
            assert triplet_loss(d_ap, d_an, m) == pytest.approx(m)

    def test_single_user_batch_skips_with_warning(self):
        emb = np.random.default_rng(0).normal(size=(4, 2))
        with pytest.warns(UserWarning, match="degenerate"):
            assert mine_batch(emb, ["A", "A", "A", "A"]) == []


class TestRetrievalMetrics:
    def test_separable_clusters_are_perfect(self, rng):
        ref_emb = np.concatenate([rng.normal(loc=c * 10, scale=0.1, size=(4, 3))
                                  for c in range(3)])
        ref_users = np.repeat(["A", "B", "C"], 4)
        q_emb = ref_emb + rng.normal(scale=0.05, size=ref_emb.shape)
        assert precision_at_1(q_emb, ref_users, ref_emb, ref_users) == 1.0
        assert r_precision(q_emb, ref_users, ref_emb, ref_users) == 1.0

    def test_r_precision_half_case(self):
        # query of user A; A refs at distances 1 and 3, B ref at distance 2:
        # the R=2 nearest are one A and one B -> 0.5
        q = np.array([[0.0, 0.0]])
        refs = np.array([[1.0, 0.0], [3.0, 0.0], [2.0, 0.0]])
        users = np.array(["A", "A", "B"])
        assert r_precision(q, ["A"], refs, users) == pytest.approx(0.5)

    def test_precision_at_1_zero_case(self):
        q = np.array([[0.0, 0.0]])
        refs = np.array([[0.1, 0.0], [1.0, 0.0], [2.0, 0.0]])
        users = np.array(["B", "A", "C"])
        assert precision_at_1(q, ["A"], refs, users) == 0.0

    def test_single_user_self_retrieval(self, rng):
        pts = rng.normal(size=(6, 4))
        for i in range(6):
            q = pts[i:i + 1]
            refs = np.delete(pts, i, axis=0)
            users = np.array(["A"] * 5)
            assert precision_at_1(q, ["A"], refs, users) == 1.0
            assert r_precision(q, ["A"], refs, users) == 1.0

    def test_matches_brute_force_on_random_sets(self, rng):
        for _ in range(40):
            n_ref = int(rng.integers(3, 25))
            n_q = int(rng.integers(2, 15))
            d = int(rng.integers(2, 6))
            ref_emb = rng.normal(size=(n_ref, d))
            q_emb = rng.normal(size=(n_q, d))
            pool = ["A", "B", "C"]
            ref_users = np.array([pool[i] for i in rng.integers(0, 3, n_ref)])
            q_users = np.array([pool[i] for i in rng.integers(0, 3, n_q)])
            if not set(q_users) & set(ref_users):
                continue
            want_p1 = oracle_precision_at_1(q_emb, q_users, ref_emb, ref_users)
            assert precision_at_1(q_emb, q_users, ref_emb, ref_users) == pytest.approx(want_p1)
            if set(q_users) <= set(ref_users):
                want_rp = oracle_r_precision(q_emb, q_users, ref_emb, ref_users)
                assert r_precision(q_emb, q_users, ref_emb, ref_users) == pytest.approx(want_rp)

    def test_order_preserving_transform_invariance(self, rng):
        ref_emb = rng.normal(size=(12, 4))
        q_emb = rng.normal(size=(8, 4))
        ref_users = np.array(list("AABBCCDDAABB"))
        q_users = np.array(list("ABCDABCD"))
        base_p1 = precision_at_1(q_emb, q_users, ref_emb, ref_users)
        base_rp = r_precision(q_emb, q_users, ref_emb, ref_users)
        assert precision_at_1(q_emb * 2.7, q_users, ref_emb * 2.7, ref_users) == base_p1
        assert r_precision(q_emb * 2.7, q_users, ref_emb * 2.7, ref_users) == base_rp

    def test_empty_references_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            precision_at_1(rng.normal(size=(2, 3)), ["A", "B"], np.zeros((0, 3)), [])

    def test_query_without_references_warns(self, rng):
        refs = rng.normal(size=(4, 2))
        ref_users = np.array(["A"] * 4)
        qs = rng.normal(size=(2, 2))
        with pytest.warns(UserWarning, match="excluded"):
            val = r_precision(qs, ["A", "Z"], refs, ref_users)
        assert 0.0 <= val <= 1.0


class TestAlternateSplit:
    def test_alternation_per_group(self, rng):
        wins = small_cohort_windows(n_users=2, duration_s=40.0, master_seed=1)
        refs, queries = alternate_query_reference(wins)
        assert len(refs) + len(queries) == len(wins)
        assert abs(len(refs) - len(queries)) <= 2  # one extra per odd-sized group
        assert not {w.window_id for w in refs} & {w.window_id for w in queries}


@pytest.fixture(scope="module")
def cohort():
    # 4 training users; 4 held-out users with non-overlapping eval windows
    return small_cohort_train_val(n_users=8, n_train=4, duration_s=120.0,
                                  master_seed=99)


class TestTrain:
    def test_zero_learning_rate_keeps_weights(self, cohort):
        train_w, val_w = cohort
        cfg = TrainConfig(learning_rate=0.0, p_users=2, k_windows=2, epochs=1,
                          patience=1, seed=0)
        model = init_model(SMALL_MODEL)
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        train(model, train_w, val_w, cfg, fps=15.0)
        for n, p in model.named_parameters():
            assert torch.equal(before[n], p)

    def test_fixed_seed_reproduces_history(self, cohort):
        train_w, val_w = cohort
        cfg = TrainConfig(p_users=2, k_windows=3, epochs=2, patience=2, seed=4)
        histories = []
        for _ in range(2):
            model = init_model(SMALL_MODEL)
            _, history = train(model, train_w, val_w, cfg, fps=15.0)
            histories.append(history)
        assert histories[0] == histories[1]

    def test_overlapping_users_rejected(self, cohort):
        train_w, val_w = cohort
        cfg = TrainConfig(epochs=1)
        with pytest.raises(ConfigurationError, match="overlap"):
            train(init_model(SMALL_MODEL), train_w, val_w + train_w[:1], cfg, fps=15.0)

    def test_learns_synthetic_cohort(self, cohort):
        train_w, val_w = cohort
        cfg = TrainConfig(margin=0.2, learning_rate=1e-3, p_users=4, k_windows=4,
                          epochs=15, patience=6, seed=1)
        model = init_model(SMALL_MODEL)
        ckpt, history = train(model, train_w, val_w, cfg, fps=15.0)
        assert ckpt.train_state.best_val_precision_at_1 >= 0.9
        assert ckpt.window_len == 200
        assert len(history) <= 15


class TestHyperparameterSearch:
    def test_budget_one_returns_trained_model(self, cohort):
        train_w, val_w = cohort
        ckpt, trials = hyperparameter_search(
            {"learning_rate": [1e-3]}, budget=1, seed=0,
            train_windows=train_w, val_windows=val_w,
            fps=15.0, base_model=SMALL_MODEL,
            base_train=TrainConfig(p_users=2, k_windows=2, epochs=1, patience=1))
        assert len(trials) == 1
        assert ckpt.train_state.best_val_precision_at_1 == trials[0].val_precision_at_1

    def test_zero_lr_trial_loses(self):
        # a frozen (lr=0) model keeps its random-init embeddings; on a
        # jittery cohort that stays well below the trained trial
        train_w, val_w = noisy_cohort_train_val(duration_s=160.0,
                                                pos_noise=0.035, rot_noise=4.0)
        ckpt, trials = hyperparameter_search(
            {"learning_rate": [0.0, 1e-3]}, budget=2, seed=8,
            train_windows=train_w, val_windows=val_w,
            fps=15.0, base_model=SMALL_MODEL,
            base_train=TrainConfig(p_users=4, k_windows=4, epochs=15, patience=15))
        sampled_lrs = {t.config["learning_rate"] for t in trials}
        assert sampled_lrs == {0.0, 1e-3}
        best = max(trials, key=lambda t: t.val_precision_at_1)
        assert best.config["learning_rate"] == 1e-3
        assert ckpt.train_state.best_val_precision_at_1 == best.val_precision_at_1

    def test_fixed_seed_identical_trial_sequence(self, cohort):
        train_w, val_w = cohort
        kwargs = dict(
            train_windows=train_w, val_windows=val_w,
            fps=15.0, base_model=SMALL_MODEL,
            base_train=TrainConfig(p_users=2, k_windows=2, epochs=1, patience=1))
        _, t1 = hyperparameter_search({"gru_hidden": [16, 32]}, 3, 11, **kwargs)
        _, t2 = hyperparameter_search({"gru_hidden": [16, 32]}, 3, 11, **kwargs)
        assert t1 == t2

    def test_bad_budget_rejected(self, cohort):
        train_w, val_w = cohort
        with pytest.raises(ConfigurationError):
            hyperparameter_search({}, 0, 0, train_windows=train_w,
                                  val_windows=val_w, fps=15.0)

    def test_unknown_key_rejected(self, cohort):
        train_w, val_w = cohort
        with pytest.raises(ConfigurationError, match="unknown"):
            hyperparameter_search({"warp_speed": [1]}, 1, 0,
                                  train_windows=train_w, val_windows=val_w, fps=15.0)

    def test_trial_log_format(self, tmp_path):
        trials = [TrialRecord(0, 123, {"learning_rate": 0.001}, 0.9, 0.8, 5)]
        path = tmp_path / "trials.csv"
        write_trial_log(trials, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "trial_id,seed,config_json,val_precision_at_1,val_r_precision,epochs_ran"
        assert lines[1].startswith('0,123,"{""learning_rate"": 0.001}",0.9,0.8,5')


class TestValidationReport:
    def test_range_enforced(self):
        with pytest.raises(InvalidInputError):
            ValidationReport(r_precision=1.2, precision_at_1=0.5, epoch=0)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(p_users=1)
        with pytest.raises(ConfigurationError):
            TrainConfig(margin=0.0)
