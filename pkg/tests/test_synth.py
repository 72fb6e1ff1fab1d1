import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advcali.graph import degrees, top_degree_mask
from advcali.losses import ConfidenceView
from advcali.metrics import degree_ece
from advcali.models import softmax
from advcali.synth import PlantRule, SbmSpec, build_instance, gen_sbm, plant_miscalibration
from advcali.trainer import ClassifierConfig


def test_deterministic_limit():
    g, labels, feats = gen_sbm(SbmSpec([3, 3], 1.0, 0.0))
    assert g.num_edges == 6 and degrees(g).tolist() == [2] * 6
    s, d, _ = g.edge_list()
    assert np.all(labels[s] == labels[d])
    assert feats.shape == (6, 2)


@pytest.mark.parametrize("seed", range(5))
def test_intra_edges_binomial(seed):
    g, labels, _ = gen_sbm(SbmSpec([50, 50], 0.2, 0.02, seed))
    s, d, _ = g.edge_list()
    intra = int(np.sum(labels[s] == labels[d]))
    trials = 2 * 50 * 49 // 2
    mean, sd = 0.2 * trials, math.sqrt(trials * 0.2 * 0.8)
    assert mean == 490.0
    assert abs(intra - mean) <= 4 * sd


def test_same_seed_same_graph():
    a = gen_sbm(SbmSpec([20, 30], 0.3, 0.05, 9))
    b = gen_sbm(SbmSpec([20, 30], 0.3, 0.05, 9))
    assert np.array_equal(a[0].col_indices, b[0].col_indices)
    assert np.array_equal(a[2], b[2])


def test_spec_validation():
    with pytest.raises(ValueError, match="p_in"):
        SbmSpec([5], 1.5, 0.0)
    with pytest.raises(ValueError, match="p_out"):
        SbmSpec([5], 0.1, 0.2)
    with pytest.raises(ValueError):
        PlantRule("top_degree", tau=0.0)
    with pytest.raises(ValueError):
        PlantRule("nowhere")


def test_plant_identity_and_sharpening():
    g, labels, _ = gen_sbm(SbmSpec([10, 10], 0.4, 0.05, 1))
    z = np.random.default_rng(1).normal(size=(20, 2))
    assert np.array_equal(plant_miscalibration(z, PlantRule("top_degree", 0.25, 1.0), g), z)
    zp = plant_miscalibration(z, PlantRule("class", 1, 0.5), g, labels)
    hit = labels == 1
    assert np.all(softmax(zp).max(1)[hit] > softmax(z).max(1)[hit])
    assert np.array_equal(zp[~hit], z[~hit])
    with pytest.raises(ValueError):
        plant_miscalibration(z, PlantRule("community", 0), g, labels)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.05, 5.0))
def test_plant_preserves_argmax(seed, tau):
    g, labels, _ = gen_sbm(SbmSpec([8, 8], 0.5, 0.1, seed % 1000))
    z = np.random.default_rng(seed).normal(size=(16, 2))
    zp = plant_miscalibration(z, PlantRule("top_degree", 0.5, tau), g)
    assert np.array_equal(zp.argmax(1), z.argmax(1))


def _dece(z, inst):
    return degree_ece(ConfidenceView.from_probs(softmax(z), inst.labels), inst.graph, inst.test_mask)


@pytest.mark.parametrize("seed", range(3))
def test_planting_raises_degree_ece(seed):
    # 1000 nodes at the 300-node mean degree: with ~190 top-degree test nodes the
    # 15-bin ECE noise floor (~0.03) sits below the planted effect
    inst = build_instance(SbmSpec([500, 500], 0.06, 0.006, seed), PlantRule("top_degree", 0.25, 0.5),
                          ClassifierConfig(seed=seed, propagate=False), base_ts=True)
    assert _dece(inst.logits, inst) > _dece(inst.clean_logits, inst)


def test_oracle_inversion():
    inst = build_instance(SbmSpec([60, 60], 0.2, 0.02, 2), PlantRule("top_degree", 0.25, 0.5),
                          ClassifierConfig(seed=2, epochs=50))
    t = np.where(inst.planted_mask, 1 / 0.5, 1.0)
    restored = inst.logits / t[:, None]
    assert np.max(np.abs(restored - inst.clean_logits)) <= 1e-12
    assert np.array_equal(inst.planted_mask, top_degree_mask(inst.graph, 0.25))
