import numpy as np
import pytest

from reidbench.distances import pairwise_distance
from reidbench.errors import BadParamsError
from reidbench.metrics import evaluate
from reidbench.synth import SynthConfig, generate, split_query_gallery


def test_row_count_and_histogram():
    emb = generate(SynthConfig(n_ids=10, per_id_per_cam=5, n_cams=2))
    assert emb.n == 100
    ids, counts = np.unique(emb.person_ids, return_counts=True)
    assert ids.tolist() == list(range(10)) and (counts == 10).all()
    pairs, counts = np.unique(np.stack([emb.person_ids, emb.cam_ids]), axis=1, return_counts=True)
    assert pairs.shape[1] == 20 and (counts == 5).all()


def test_zero_noise_is_perfect():
    emb = generate(SynthConfig(noise_sigma=0.0, cam_offset_sigma=0.0, seed=4))
    rep = evaluate(pairwise_distance(emb, emb))
    assert rep.map == 1.0 and rep.minp == 1.0 and rep.n_skipped == 0


def test_deterministic_per_seed():
    cfg = SynthConfig(dim=8, cam_offset_sigma=0.3, seed=21)
    assert generate(cfg) == generate(cfg)
    assert generate(cfg) != generate(SynthConfig(dim=8, cam_offset_sigma=0.3, seed=22))


def test_components():
    cfg = SynthConfig(n_ids=3, per_id_per_cam=4, n_cams=3, dim=5, noise_sigma=0.0, cam_offset_sigma=0.5)
    emb = generate(cfg)
    f = emb.as_float64()
    # without noise, rows sharing id and camera coincide and the camera shift is id-independent
    for pid in range(3):
        for cam in range(3):
            rows = f[(emb.person_ids == pid) & (emb.cam_ids == cam)]
            assert np.ptp(rows, axis=0).max() == 0
    shift = lambda pid: f[(emb.person_ids == pid) & (emb.cam_ids == 1)][0] - f[(emb.person_ids == pid) & (emb.cam_ids == 0)][0]
    np.testing.assert_allclose(shift(0), shift(2), atol=1e-6)


def test_invalid_config():
    with pytest.raises(BadParamsError):
        SynthConfig(n_ids=0)
    with pytest.raises(BadParamsError):
        SynthConfig(noise_sigma=-1.0)


def test_split():
    emb = generate(SynthConfig(n_ids=6, per_id_per_cam=3, n_cams=2))
    q, g = split_query_gallery(emb, per_id=2, seed=3)
    assert q.n == 12 and g.n == 24
    assert (np.bincount(q.person_ids) == 2).all()
    both = np.concatenate([q.as_float64(), g.as_float64()])
    assert np.unique(both, axis=0).shape[0] == emb.n
