import numpy as np
import pytest

from radardepth import refiner as R
from radardepth import synth
from radardepth.labelgen import build_labels
from radardepth.pipeline import frame_sample
from radardepth.train import Adam, TrainingDiverged, load_params, save_params, train, write_history

CFG = R.RefinerConfig(radar_mlp_widths=(8, 16), patch_size=(15, 15), patch_cell=5,
                      patch_encoder_widths=(8,), attention_dim=8, head_hidden=8,
                      epochs=4, learning_rate=3e-3, batch_size=3)


def _data(n=6, seed=0):
    return synth.confidence_task(n, 6, patch_size=(15, 15), seed=seed)


def test_adam_first_step_is_lr_sized():
    x = np.array([1.0, -2.0])
    Adam(lr=0.1).step(x, np.array([3.0, -0.5]))
    np.testing.assert_allclose(x, [0.9, -1.9], atol=1e-8)


def test_zero_learning_rate_leaves_params():
    cfg = R.RefinerConfig(**{**CFG.to_dict(), "learning_rate": 0.0})
    init = R.RefinerParams.init(cfg)
    params, hist = train(_data(), cfg)
    np.testing.assert_array_equal(params.vector, init.vector)
    assert len({h.total for h in hist}) == 1
    assert [h.epoch for h in hist] == list(range(cfg.epochs + 1))


def test_training_is_deterministic():
    a, ha = train(_data(), CFG)
    b, hb = train(_data(), CFG)
    assert a.vector.tobytes() == b.vector.tobytes()
    assert [h.total for h in ha] == [h.total for h in hb]


def test_training_reduces_loss():
    _, hist = train(_data(), CFG)
    assert hist[-1].total < hist[0].total


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts():
    cfg = R.RefinerConfig(**{**CFG.to_dict(), "learning_rate": 1e300, "epochs": 3})
    with pytest.raises(TrainingDiverged):
        train(_data(), cfg)


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train([], CFG)


def test_params_round_trip(tmp_path):
    p = R.RefinerParams.init(CFG, seed=3)
    save_params(p, tmp_path / "params.bin")
    assert (tmp_path / "params.bin").stat().st_size == 8 * p.vector.size
    q = load_params(tmp_path / "params.bin")
    assert q.config == p.config
    assert q.index == p.index
    assert q.vector.tobytes() == p.vector.tobytes()


def test_history_csv(tmp_path):
    _, hist = train(_data(2), R.RefinerConfig(**{**CFG.to_dict(), "epochs": 1}))
    write_history(tmp_path / "h.csv", hist)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,conf_loss,disp_loss,total"
    assert len(lines) == 3


def test_default_config_on_synthetic_frames():
    cfg = R.RefinerConfig()
    data = []
    for seed in range(20):
        f = synth.generate(synth.SceneConfig(seed=seed))
        data.append(frame_sample(f.image, f.radar, build_labels(f.radar, f.lidar), cfg.patch_size))
    _, hist = train(data, cfg)
    assert hist[-1].total < 0.5 * hist[0].total
