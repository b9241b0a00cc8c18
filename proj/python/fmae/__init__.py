"""Flexible masked-autoencoder pretraining for heterogeneous battery data.

The heavy lifting lives in the compiled extension; this package re-exports
its public surface.
"""

from fmae._core import (  # noqa: F401
    FmaeError,
    __version__,
    anomaly_vehicle_score,
    auroc,
    evaluate,
    finetune,
    generate_fleet,
    lr_at,
    model_shape_summary,
    naive_rul_baseline,
    pretrain,
    probe_collapse,
    rmse_mae_mape,
    sinusoidal_encoding,
)

__all__ = [
    "FmaeError",
    "__version__",
    "anomaly_vehicle_score",
    "auroc",
    "evaluate",
    "finetune",
    "generate_fleet",
    "lr_at",
    "model_shape_summary",
    "naive_rul_baseline",
    "pretrain",
    "probe_collapse",
    "rmse_mae_mape",
    "sinusoidal_encoding",
]
