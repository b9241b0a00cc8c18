"""End-to-end smoke tests for the python bindings."""

import math

import pytest

import fmae


def test_version_and_shapes():
    assert fmae.__version__
    shapes = fmae.model_shape_summary()
    assert shapes["encoder_token_width"] == 108
    assert shapes["decoder_token_width"] == 72
    assert shapes["reconstruction_width"] == 128
    assert (shapes["encoder_layers"], shapes["encoder_heads"]) == (6, 3)
    assert (shapes["decoder_layers"], shapes["decoder_heads"]) == (4, 4)


def test_lr_schedule_endpoints():
    assert fmae.lr_at(0, steps_per_epoch=10) == 0.0
    assert fmae.lr_at(40 * 10, steps_per_epoch=10) == pytest.approx(1.5e-4)
    assert fmae.lr_at(800 * 10, steps_per_epoch=10) == 0.0


def test_sinusoidal_encoding():
    enc = fmae.sinusoidal_encoding(0, 12)
    assert enc[0::2] == [0.0] * 6
    assert enc[1::2] == [1.0] * 6
    with pytest.raises(fmae.FmaeError):
        fmae.sinusoidal_encoding(0, 7)


def test_metrics():
    assert fmae.auroc([0.1, 0.9], [False, True]) == 1.0
    assert fmae.auroc([0.5, 0.5], [False, True]) == 0.5
    m = fmae.rmse_mae_mape([1.0, 2.0], [1.0, 2.0])
    assert m["rmse"] == 0.0 and m["mape"] == 0.0
    assert fmae.anomaly_vehicle_score([0.1] * 18 + [0.9, 0.7]) == pytest.approx(0.8)
    assert fmae.naive_rul_baseline([100.0, 200.0], [150.0]) == 0.0


@pytest.fixture(scope="module")
def small_model_overrides():
    return {
        "model.enc_dim": 8,
        "model.enc_pos_dim": 4,
        "model.enc_layers": 1,
        "model.enc_heads": 2,
        "model.dec_dim": 6,
        "model.dec_pos_dim": 2,
        "model.dec_layers": 1,
        "model.dec_heads": 2,
        "model.patches": 4,
    }


def test_pipeline_round_trip(tmp_path, small_model_overrides):
    data = fmae.generate_fleet(
        str(tmp_path / "data"),
        {"seed": 3, "fleet.kind": "lab", "fleet.sources": 6,
         "fleet.snippets_per_source": 10},
    )
    assert data["snippets"] == 60

    pre = fmae.pretrain(
        str(tmp_path / "data"),
        str(tmp_path / "pre"),
        dict(small_model_overrides, **{
            "seed": 3,
            "pretrain.epochs": 2,
            "pretrain.warmup_epochs": 0,
            "pretrain.batch_groups": 2,
            "pretrain.group_size": 3,
        }),
    )
    assert len(pre["epoch_loss"]) == 2
    assert all(math.isfinite(x) for x in pre["epoch_loss"])

    fin = fmae.finetune(
        "capacity",
        str(tmp_path / "data"),
        pre["checkpoint"],
        str(tmp_path / "fin"),
        {"seed": 3, "finetune.epochs": 1, "finetune.batch": 8,
         "finetune.fraction": 0.5},
    )
    mean_rmse, _, fold_values = fin["metrics"]["rmse"]
    assert len(fold_values) == 5
    assert math.isfinite(mean_rmse)

    ev = fmae.evaluate(fin["fold_checkpoints"][0], str(tmp_path / "data"),
                       str(tmp_path / "eval"))
    assert math.isfinite(ev["rmse"])


def test_collapse_probe_dichotomy(tmp_path, small_model_overrides):
    out = fmae.probe_collapse(str(tmp_path / "probe"),
                              overrides=dict(small_model_overrides, seed=5))
    assert out["vanilla_max"] < 1e-6
    assert out["battery_state_max"] > 1e-3
