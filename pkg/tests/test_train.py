import numpy as np
import pytest

from conftest import random_sentence_batch, random_unit_rows
from wincel.embed import PseudoProvider, pseudo_embed
from wincel.errors import DegenerateLabels, ValidationError, ZeroNorm
from wincel.linalg import normalize_rows
from wincel.train import (
    LOSS_KINDS,
    AdamWState,
    Checkpoint,
    LinearProbe,
    ProjectionHead,
    TrainConfig,
    TrainData,
    TripletRecord,
    adamw_step,
    assemble_batch,
    backward_visual,
    finite_diff_check,
    fit,
    forward_batch,
    forward_visual,
    scheduler_lr,
    train_linear_probe,
)


def make_dataset(rng, n_records=40, d_in=10, d=12, n_sentences=30, n_classes=3):
    embeds = random_unit_rows(rng, n_sentences, d)
    records = []
    for i in range(n_records):
        ids = [int(x) for x in rng.choice(n_sentences, size=int(rng.integers(1, 6)), replace=False)]
        records.append(
            TripletRecord(
                tile_id=f"t{i}",
                features=rng.standard_normal(d_in),
                sentence_ids=ids,
                label=int(rng.integers(0, n_classes)),
                row=i,
            )
        )
    texts = [f"sentence {i} with several filler words" for i in range(n_sentences)]
    return TrainData(records=records, sentence_embeds=embeds, sentence_texts=texts)


class TestForwardBackward:
    def test_identity_map(self, rng):
        x = random_unit_rows(rng, 1, 5)[0]
        head = ProjectionHead(W=np.eye(5))
        v, _ = forward_visual(head, x)
        np.testing.assert_allclose(v, x, atol=1e-12)

    def test_scale_invariance(self, rng):
        x = random_unit_rows(rng, 1, 5)[0]
        v, _ = forward_visual(ProjectionHead(W=2 * np.eye(5)), x)
        np.testing.assert_allclose(v, x, atol=1e-12)

    def test_unit_norm(self, rng):
        head = ProjectionHead.initialize(8, 6, rng)
        V, _ = forward_batch(head, rng.standard_normal((10, 8)))
        np.testing.assert_allclose(np.linalg.norm(V, axis=1), 1.0, atol=1e-6)

    def test_zero_norm_raises(self):
        with pytest.raises(ZeroNorm):
            forward_visual(ProjectionHead(W=np.zeros((3, 3))), np.ones(3))

    def test_parallel_gradient_vanishes(self, rng):
        head = ProjectionHead.initialize(5, 5, rng)
        x = rng.standard_normal(5)
        v, cache = forward_visual(head, x)
        grad_W, _, grad_x = backward_visual(cache, 3.0 * v)
        np.testing.assert_allclose(grad_W, 0.0, atol=1e-12)
        np.testing.assert_allclose(grad_x, 0.0, atol=1e-12)

    def test_unit_norm_orthogonal_case(self, rng):
        # |Wx| = 1 and grad orthogonal to V: grad_x reduces to W @ grad.
        W = np.eye(4)
        x = random_unit_rows(rng, 1, 4)[0]
        v, cache = forward_visual(ProjectionHead(W=W), x)
        g = rng.standard_normal(4)
        g -= (g @ v) * v
        _, _, grad_x = backward_visual(cache, g)
        np.testing.assert_allclose(grad_x, W @ g, atol=1e-9)

    def test_backward_matches_finite_differences(self, rng):
        head = ProjectionHead.initialize(6, 4, rng, use_bias=True)
        x = rng.standard_normal(6)
        target = random_unit_rows(rng, 1, 4)[0]

        def scalar(h):
            v, _ = forward_visual(h, x)
            return float(v @ target)

        v, cache = forward_visual(head, x)
        grad_W, grad_b, grad_x = backward_visual(cache, target)
        h = 1e-6
        for idx in np.ndindex(head.W.shape):
            wp, wm = head.W.copy(), head.W.copy()
            wp[idx] += h
            wm[idx] -= h
            fd = (scalar(ProjectionHead(W=wp, bias=head.bias)) - scalar(ProjectionHead(W=wm, bias=head.bias))) / (2 * h)
            assert fd == pytest.approx(grad_W[idx], rel=1e-5, abs=1e-9)
        for i in range(4):
            bp, bm = head.bias.copy(), head.bias.copy()
            bp[i] += h
            bm[i] -= h
            fd = (scalar(ProjectionHead(W=head.W, bias=bp)) - scalar(ProjectionHead(W=head.W, bias=bm))) / (2 * h)
            assert fd == pytest.approx(grad_b[i], rel=1e-5, abs=1e-9)


class TestAdamW:
    def test_zero_grads_no_decay_unchanged(self):
        p = {"w": np.array([1.0, -2.0, 3.0])}
        state = AdamWState.for_params(p)
        adamw_step(p, {"w": np.zeros(3)}, state, lr=0.1, weight_decay=0.0)
        np.testing.assert_array_equal(p["w"], [1.0, -2.0, 3.0])

    def test_first_step_formula(self):
        p = {"w": np.array([2.0, -1.0])}
        state = AdamWState.for_params(p)
        g = np.array([0.3, -0.7])
        adamw_step(p, {"w": g}, state, lr=0.01, weight_decay=0.0)
        expected = np.array([2.0, -1.0]) - 0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(p["w"], expected, atol=1e-12)

    def test_pure_decay(self):
        p = {"w": np.array([5.0])}
        state = AdamWState.for_params(p)
        adamw_step(p, {"w": np.zeros(1)}, state, lr=0.1, weight_decay=0.01)
        assert p["w"][0] == pytest.approx(5.0 * (1 - 0.1 * 0.01), abs=1e-12)

    def test_lr_zero_never_moves(self, rng):
        p = {"w": rng.standard_normal((4, 3))}
        orig = p["w"].copy()
        state = AdamWState.for_params(p)
        with pytest.raises(ValidationError):
            TrainConfig(lr=0.0)
        for _ in range(5):
            adamw_step(p, {"w": rng.standard_normal((4, 3))}, state, lr=0.0, weight_decay=0.5)
        np.testing.assert_array_equal(p["w"], orig)


class TestScheduler:
    def test_initial_lr(self):
        assert scheduler_lr(TrainConfig(), 0) == pytest.approx(1e-4)

    def test_one_decay_step(self):
        assert scheduler_lr(TrainConfig(), 2) == pytest.approx(9.5e-5)

    def test_final_epoch(self):
        assert scheduler_lr(TrainConfig(), 59) == pytest.approx(1e-4 * 0.95**29)

    def test_non_increasing(self):
        cfg = TrainConfig()
        lrs = [scheduler_lr(cfg, e) for e in range(60)]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))


class TestAssembleBatch:
    def test_exact_k_no_pads(self, rng):
        data = make_dataset(rng)
        rec = TripletRecord("x", rng.standard_normal(10), [0, 1, 2], 0, 0)
        X, sb, labels = assemble_batch([rec], data.sentence_embeds, 3, rng=rng)
        assert sb.pad_mask.all()
        np.testing.assert_allclose(sb.T[0], data.sentence_embeds[[0, 1, 2]], atol=1e-12)

    def test_padding(self, rng):
        data = make_dataset(rng)
        rec = TripletRecord("x", rng.standard_normal(10), [4], 0, 0)
        X, sb, _ = assemble_batch([rec], data.sentence_embeds, 15, rng=rng)
        assert sb.pad_mask[0].sum() == 1
        np.testing.assert_array_equal(sb.T[0, 1:], 0.0)

    def test_subsample_membership_and_determinism(self, rng):
        data = make_dataset(rng)
        ids = list(range(20))
        rec = TripletRecord("x", rng.standard_normal(10), ids, 0, row=7)
        X1, sb1, _ = assemble_batch([rec], data.sentence_embeds, 15, seed_ctx=(3, 1))
        X2, sb2, _ = assemble_batch([rec], data.sentence_embeds, 15, seed_ctx=(3, 1))
        np.testing.assert_array_equal(sb1.T, sb2.T)
        assert sb1.pad_mask.all()
        # Membership: every selected row equals some bank row from the id list.
        for row in sb1.T[0]:
            assert any(np.allclose(row, data.sentence_embeds[i]) for i in ids)
        # A different epoch draws a different subset (overwhelmingly likely).
        X3, sb3, _ = assemble_batch([rec], data.sentence_embeds, 15, seed_ctx=(3, 2))
        assert not np.array_equal(sb1.T, sb3.T)


class TestFit:
    def test_zero_epochs_returns_init(self, rng):
        data = make_dataset(rng)
        cfg = TrainConfig(epochs=0, batch_size=8, k=3, seed=1)
        ck, hist = fit(data, cfg)
        init = ProjectionHead.initialize(data.d_in, data.d_out, np.random.default_rng([1, 0]))
        np.testing.assert_array_equal(ck.W, init.W)
        assert hist == []

    def test_same_seed_bit_identical(self, rng):
        data = make_dataset(rng)
        cfg = TrainConfig(loss_kind="wincel", epochs=3, batch_size=8, k=3, seed=5, lr=1e-3)
        a, _ = fit(data, cfg)
        b, _ = fit(data, cfg)
        assert a.to_bytes() == b.to_bytes()

    def test_loss_decreases_on_separable_data(self, rng):
        # Features linearly determine the (single) matching sentence.
        d = 12
        embeds = random_unit_rows(rng, 8, d)
        records = []
        for i in range(64):
            sid = i % 8
            records.append(
                TripletRecord(
                    tile_id=f"s{i}",
                    features=embeds[sid] + 0.05 * rng.standard_normal(d),
                    sentence_ids=[sid],
                    label=sid,
                    row=i,
                )
            )
        data = TrainData(records=records, sentence_embeds=embeds)
        cfg = TrainConfig(loss_kind="wincel", epochs=5, batch_size=32, k=1, seed=2, lr=0.01)
        _, hist = fit(data, cfg)
        assert hist[-1][1] < hist[0][1]

    def test_single_sample_remainder_dropped(self, rng):
        data = make_dataset(rng, n_records=17)
        cfg = TrainConfig(loss_kind="infonce", epochs=1, batch_size=16, k=3, seed=0, lr=1e-3)
        ck, hist = fit(data, cfg)  # 17 = 16 + 1; the remainder must be skipped
        assert ck.step == 1

    def test_all_loss_kinds_run(self, rng):
        data = make_dataset(rng)
        provider = PseudoProvider(dim=data.d_out, seed=0)
        for kind in LOSS_KINDS:
            cfg = TrainConfig(loss_kind=kind, epochs=1, batch_size=10, k=3, seed=3, lr=1e-3)
            ck, hist = fit(data, cfg, embed_provider=provider)
            assert np.isfinite(hist[0][1])


class TestCheckpoint:
    def test_roundtrip_bit_exact(self, rng):
        data = make_dataset(rng)
        cfg = TrainConfig(loss_kind="wincel", epochs=2, batch_size=8, k=3, seed=9, lr=1e-3, use_bias=True)
        ck, _ = fit(data, cfg)
        blob = ck.to_bytes()
        again = Checkpoint.from_bytes(blob).to_bytes()
        assert blob == again

    def test_truncated_rejected(self, rng):
        data = make_dataset(rng)
        ck, _ = fit(data, TrainConfig(epochs=1, batch_size=8, k=3, seed=9, lr=1e-3))
        blob = ck.to_bytes()
        from wincel.errors import CorruptFile

        with pytest.raises(CorruptFile):
            Checkpoint.from_bytes(blob[:-4])


class TestLinearProbe:
    def test_separable_toy(self):
        X = np.array([[1.0, 0.0], [2.0, 0.5], [-1.0, 0.2], [-2.0, -0.3]] * 5)
        y = np.array([0, 0, 1, 1] * 5)
        probe = train_linear_probe(X, y, 2, TrainConfig(epochs=200, lr=0.1, batch_size=4))
        assert probe.accuracy(X, y) == 1.0

    def test_degenerate_labels(self, rng):
        with pytest.raises(DegenerateLabels):
            train_linear_probe(rng.standard_normal((10, 3)), np.zeros(10, dtype=int), 2, TrainConfig())

    def test_zero_epochs_uniform(self, rng):
        X = rng.standard_normal((30, 4))
        y = np.repeat(np.arange(3), 10)
        probe = train_linear_probe(X, y, 3, TrainConfig(epochs=0))
        # Zero weights -> constant argmax (class 0) -> accuracy = share of class 0.
        assert probe.accuracy(X, y) == pytest.approx(1 / 3, abs=1e-9)

    def test_accuracy_at_least_chance(self, rng):
        X = rng.standard_normal((60, 5))
        y = np.array([int(x) for x in rng.integers(0, 3, size=60)])
        probe = train_linear_probe(X, y, 3, TrainConfig(epochs=50, lr=0.05, batch_size=4))
        assert probe.accuracy(X, y) >= np.mean([np.mean(y == c) for c in range(3)])


class TestPseudoEmbed:
    def test_deterministic(self):
        a = pseudo_embed("alpine meadow habitat", 32, seed=4)
        b = pseudo_embed("alpine meadow habitat", 32, seed=4)
        np.testing.assert_array_equal(a, b)

    def test_bag_of_words_order_invariant(self):
        a = pseudo_embed("alpine meadow", 32, seed=0)
        b = pseudo_embed("meadow alpine", 32, seed=0)
        np.testing.assert_array_equal(a, b)

    def test_empty_raises(self):
        with pytest.raises(ZeroNorm):
            pseudo_embed("   ", 32)

    def test_min_dim(self):
        with pytest.raises(ValidationError):
            pseudo_embed("text", 4)

    def test_shared_tokens_raise_similarity(self, rng):
        base_tokens = [f"tok{i}" for i in range(10)]
        shared, disjoint = [], []
        for trial in range(100):
            t1 = " ".join(base_tokens)
            t2 = " ".join(base_tokens[:9] + [f"other{trial}"])
            t3 = " ".join(f"alien{trial}_{j}" for j in range(10))
            e1 = pseudo_embed(t1, 64, seed=1)
            shared.append(float(e1 @ pseudo_embed(t2, 64, seed=1)))
            disjoint.append(float(e1 @ pseudo_embed(t3, 64, seed=1)))
        assert np.mean(shared) > np.mean(disjoint) + 0.5


class TestFiniteDiffCheck:
    @pytest.mark.parametrize("kind", LOSS_KINDS)
    @pytest.mark.parametrize("alpha_grad", ["full", "stop_gradient"])
    def test_all_losses_pass(self, rng, kind, alpha_grad):
        head = ProjectionHead.initialize(9, 8, rng)
        X = rng.standard_normal((6, 9))
        sb = random_sentence_batch(rng, 6, 3, 8)
        texts = [[f"word{int(w)} more words here" for w in rng.integers(0, 30, size=3)] for _ in range(6)]
        cfg = TrainConfig(loss_kind=kind, alpha_grad=alpha_grad, batch_size=2)
        err = finite_diff_check(
            kind, head, (X, sb), config=cfg,
            provider=PseudoProvider(dim=8, seed=0) if kind == "substring_aug" else None,
            texts=texts,
        )
        assert err < 1e-6

    def test_negative_control(self, rng):
        head = ProjectionHead.initialize(9, 7, rng)
        X = rng.standard_normal((6, 9))
        sb = random_sentence_batch(rng, 6, 3, 7)
        cfg = TrainConfig(loss_kind="wincel", batch_size=2)
        err = finite_diff_check("wincel", head, (X, sb), config=cfg, _corruption=0.5)
        assert err > 1e-2
