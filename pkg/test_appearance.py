#!/usr/bin/env python3
"""
Тесты модели внешнего вида: NCC-сходство, классификация, банк шаблонов, регрессор рамки
"""

from dataclasses import replace

import numpy as np
import pytest

from conftest import FAST_APPEARANCE
from src.appearance import (BBoxRegressor, ScorePair, embed, init_model, map_score, ncc, regress,
                            sample_patches, train_regressor)
from src.geometry import BBox, iou


def test_embedding_dot_product_is_ncc():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(1, 8, 8))
    b = 3.0 * a + 7.0
    c = -a
    emb = embed(np.concatenate([a, b, c]))
    assert ncc(emb[1:2], emb[0])[0] == pytest.approx(1.0)
    assert ncc(emb[2:3], emb[0])[0] == pytest.approx(-1.0)


def test_flat_patches():
    rng = np.random.default_rng(1)
    flat = np.full((1, 8, 8), 42.0)
    other_flat = np.full((1, 8, 8), 200.0)
    textured = rng.normal(size=(1, 8, 8))
    emb = embed(np.concatenate([flat, other_flat, textured]))
    assert ncc(emb[1:2], emb[0])[0] == pytest.approx(1.0)
    assert ncc(emb[2:3], emb[0])[0] == pytest.approx(0.0)


mapping_cases = [
    {"name": "affine", "input": ("affine", [-1.0, 0.0, 1.0]), "expected": [0.0, 0.5, 1.0]},
    {"name": "rectified", "input": ("rectified", [-1.0, 0.0, 0.4, 1.0]), "expected": [0.0, 0.0, 0.4, 1.0]},
]


@pytest.mark.parametrize("case", mapping_cases, ids=[c["name"] for c in mapping_cases])
def test_map_score(case):
    mapping, values = case["input"]
    assert map_score(np.array(values), mapping).tolist() == pytest.approx(case["expected"])


def test_pixel_aligned_patch_sampling(frame, box0):
    patch = sample_patches(frame, np.array([box0.as_tuple()]), 32)[0]
    x, y = int(box0.x), int(box0.y)
    assert np.allclose(patch, frame[y:y + 32, x:x + 32])


def test_similarity_peaks_at_initial_box(frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    assert model.similarity(frame, box0) == pytest.approx(1.0)
    assert model.initial_similarity(frame, box0) == pytest.approx(1.0)
    far = model.similarity(frame, BBox(20.0, 20.0, 32.0, 32.0))
    assert far < 0.8
    shifted = model.similarity(frame, box0.translate(6.0, 0.0))
    assert shifted < model.similarity(frame, box0)


def test_classification_prefers_target(frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    at_target = model.classify(frame, box0)
    assert at_target > 0
    assert at_target > model.classify(frame, BBox(20.0, 150.0, 32.0, 32.0))


def test_scores_pair(frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    scores = model.scores(frame, box0)
    assert isinstance(scores, ScorePair)
    assert 0.0 <= scores.s_sim <= 1.0


def test_score_pair_validation():
    with pytest.raises(ValueError):
        ScorePair(1.5, 0.0)
    with pytest.raises(ValueError):
        ScorePair(0.5, float("nan"))


def test_degenerate_box_rejected(frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    with pytest.raises(ValueError):
        model.similarity(frame, BBox(10.0, 10.0, 1.0, 1.0))


def test_init_is_deterministic(frame, box0):
    a = init_model(frame, box0, FAST_APPEARANCE, seed=5)
    b = init_model(frame, box0, FAST_APPEARANCE, seed=5)
    assert a.state_digest() == b.state_digest()


def test_initial_template_is_immutable(frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    template = model.initial_template.copy()
    for k in range(4):
        model.collect_samples(frame, box0.translate(k, 0), frame_index=k + 1)
    model.refit()
    assert np.array_equal(model.initial_template, template)
    with pytest.raises(ValueError):
        model.initial_template[0, 0] = 0.0


def test_bank_capacity(frame, box0):
    model = init_model(frame, box0, replace(FAST_APPEARANCE, bank_capacity=3), seed=0)
    for k in range(5):
        model.collect_samples(frame, box0.translate(k, 0), frame_index=k + 1)
    assert model.bank_size() == 3


def test_buffer_is_fifo_by_frame(frame, box0):
    config = replace(FAST_APPEARANCE, pos_buffer_frames=2, neg_buffer_frames=2)
    model = init_model(frame, box0, config, seed=0)
    for k in range(1, 5):
        model.collect_samples(frame, box0, frame_index=k)
    assert model.buffer.frames() == [3, 4]
    assert model.buffer.count_at(1) == (0, 0)
    assert model.buffer.count_at(4)[0] > 0


def test_collect_then_refit_learns_new_appearance(frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    changed = frame.copy()
    x, y = int(box0.x), int(box0.y)
    changed[y:y + 32, x:x + 32] = 255.0 - changed[y:y + 32, x:x + 32]
    assert model.classify(changed, box0) < 0

    model.collect_samples(changed, box0, frame_index=1)
    assert model.refit()
    assert model.classify(changed, box0) > 0
    # S_t по начальному шаблону не меняется от обновлений
    assert model.initial_similarity(changed, box0) == pytest.approx(0.0, abs=1e-9)


def test_refit_on_empty_buffer_is_noop(frame, box0):
    model = init_model(frame, box0, FAST_APPEARANCE, seed=0)
    model.buffer.positives.clear()
    model.buffer.negatives.clear()
    digest = model.state_digest()
    assert model.refit() is False
    assert model.state_digest() == digest


def test_regressor_without_jitter_is_identity(frame, box0):
    regressor = train_regressor(frame, box0, FAST_APPEARANCE, seed=0, jitter=False)
    shifted = box0.translate(3.0, -2.0)
    assert regress(regressor, frame, shifted).as_tuple() == pytest.approx(shifted.as_tuple())


def test_regressor_improves_jittered_boxes(frame, box0):
    regressor = train_regressor(frame, box0, FAST_APPEARANCE, seed=0)
    rng = np.random.default_rng(7)
    before, after = [], []
    for _ in range(20):
        dx, dy = rng.uniform(-3.0, 3.0, 2)
        shifted = box0.translate(float(dx), float(dy))
        before.append(iou(shifted, box0))
        after.append(iou(regress(regressor, frame, shifted), box0))
    assert np.mean(after) >= np.mean(before)


def test_regressed_box_stays_in_frame(frame):
    box = BBox(0.0, 0.0, 30.0, 30.0)
    regressor = train_regressor(frame, box, FAST_APPEARANCE, seed=0)
    result = regress(regressor, frame, BBox(-5.0, -5.0, 30.0, 30.0))
    assert result.x >= 0 and result.y >= 0


def test_untrained_regressor():
    untrained = replace(BBoxRegressor.identity(), trained=False)
    with pytest.raises(RuntimeError):
        regress(untrained, np.zeros((50, 50)), BBox(10, 10, 10, 10))
