"""Shared seeded benchmarks.

The two trained-model fixtures are the frozen desk-scale benchmarks the
behavioral tests and the acceptance suite assert against; every value
derives from the fixed seeds below, so reruns are bit-identical.
"""

import numpy as np
import pytest

from dgpa.data import (
    CLASS_ANOMALY_A,
    CLASS_ANOMALY_B,
    CLASS_NORMAL,
    filter_windows,
    gen_booster_series,
    gen_pulses,
    make_pairs,
    make_windows,
)
from dgpa.diffcore import RngStream
from dgpa.siamese import SiameseConfig, predict_pairs, train_siamese
from dgpa.surrogate import SurrogateConfig, predict, train_surrogate

PULSE_SEED = 42
SIAMESE_TRAIN_SEED = 7
BOOSTER_SEED = 2024
SURROGATE_TRAIN_SEED = 77


@pytest.fixture(scope="session")
def pulse_benchmark():
    rng = RngStream(PULSE_SEED)
    train_pulses = gen_pulses({CLASS_NORMAL: 120, CLASS_ANOMALY_A: 60}, rng.split())
    pairs = make_pairs(train_pulses, 150, True, rng.split())
    test_pulses = gen_pulses({CLASS_NORMAL: 60, CLASS_ANOMALY_A: 40,
                              CLASS_ANOMALY_B: 40}, rng.split())
    seen_pool = [p for p in test_pulses if p.label != CLASS_ANOMALY_B]
    unseen_pool = [p for p in test_pulses if p.label != CLASS_ANOMALY_A]
    seen_pairs = make_pairs(seen_pool, 60, True, rng.split())
    unseen_pairs = [p for p in make_pairs(unseen_pool, 60, False, rng.split())
                    if p.label == 1]
    return {
        "train_pulses": train_pulses,
        "pairs": pairs,
        "seen_pairs": seen_pairs,
        "unseen_pairs": unseen_pairs,
    }


@pytest.fixture(scope="session")
def siamese_benchmark(pulse_benchmark):
    model = train_siamese(pulse_benchmark["pairs"], SiameseConfig(epochs=30),
                          RngStream(SIAMESE_TRAIN_SEED))

    def batch(pairs):
        a = np.stack([p.trace_a for p in pairs])
        b = np.stack([p.trace_b for p in pairs])
        return predict_pairs(model, a, b)

    prob_s, std_s, logit_s = batch(pulse_benchmark["seen_pairs"])
    prob_u, std_u, logit_u = batch(pulse_benchmark["unseen_pairs"])
    labels_s = np.array([p.label for p in pulse_benchmark["seen_pairs"]])
    return {
        "model": model,
        "labels_seen": labels_s,
        "prob_seen": prob_s, "std_seen": std_s, "logit_seen": logit_s,
        "prob_unseen": prob_u, "std_unseen": std_u, "logit_unseen": logit_u,
    }


@pytest.fixture(scope="session")
def booster_benchmark():
    rng = RngStream(BOOSTER_SEED)
    series = gen_booster_series(400, [(175, 225)], rng.split())
    windows = make_windows(series, 1)
    kept = filter_windows(windows)
    return {"series": series, "windows": windows, "kept": kept}


@pytest.fixture(scope="session")
def surrogate_benchmark(booster_benchmark):
    model = train_surrogate(booster_benchmark["kept"], SurrogateConfig(),
                            RngStream(SURROGATE_TRAIN_SEED))
    windows = booster_benchmark["windows"]
    inputs = np.stack([w.inputs for w in windows])
    means, stds = predict(model, inputs)
    return {
        "model": model,
        "means": means,
        "stds": stds,
        "targets": np.array([w.target for w in windows]),
        "flags": np.array([w.ood_flag for w in windows]),
    }
