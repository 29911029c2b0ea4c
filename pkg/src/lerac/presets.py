"""Named hyperparameter presets.

``TABLE_PRESETS`` holds the per-architecture settings reported for the
large-scale experiments (optimizer, batch size, base rate, smoothing and
curriculum parameters). Ranges are kept as ``(low, high)``; the single value
used for a run is the floor of the midpoint. Because the big architectures
themselves are not part of this package, each table preset is applied on top
of a desk-scale experiment (``DESK_PRESETS``).
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class TablePreset:
    name: str
    optimizer: str          # as reported
    batch: tuple
    epochs: tuple
    eta_base: float
    sigma: float
    d: float
    u: tuple
    k: tuple
    eta_range: tuple        # (first layer, last layer)
    desk_base: str

    @property
    def engine_optimizer(self) -> str:
        # Adam variants run as plain Adam here
        return "sgd" if self.optimizer == "SGD" else "adam"

    @property
    def k_default(self) -> int:
        return midpoint(self.k)

    @property
    def u_default(self) -> int:
        return midpoint(self.u)


def midpoint(bounds) -> int:
    lo, hi = bounds
    return (lo + hi) // 2


def _p(name, opt, batch, epochs, eta, sigma, d, u, k, rng, base):
    as_range = lambda v: v if isinstance(v, tuple) else (v, v)  # noqa: E731
    return TablePreset(name, opt, as_range(batch), as_range(epochs), eta, sigma, d,
                       as_range(u), as_range(k), rng, base)


TABLE_PRESETS = {p.name: p for p in [
    _p("resnet18", "SGD", 64, (100, 200), 1e-1, 1.0, 0.9, (2, 5), (5, 7), (1e-1, 1e-8), "cnn-blobs"),
    _p("wide_resnet50", "SGD", 64, (100, 200), 1e-1, 1.0, 0.9, (2, 5), (5, 7), (1e-1, 1e-8), "cnn-blobs"),
    _p("cvt13", "Adamax", (64, 128), (150, 200), 2e-3, 1.0, 0.9, (2, 5), (2, 5), (2e-3, 2e-8), "cnn-blobs"),
    _p("cvt13_pretrained", "Adamax", (64, 128), 25, 5e-4, 1.0, 0.9, (2, 5), (3, 6), (5e-4, 5e-10), "cnn-blobs"),
    _p("bert", "Adamax", 10, (7, 25), 5e-5, 1.0, 0.9, 1, 3, (5e-5, 5e-8), "mlp-spirals"),
    _p("lstm", "AdamW", (256, 512), (25, 70), 1e-3, 1.0, 0.9, 2, (3, 4), (1e-3, 1e-7), "mlp-spirals"),
    _p("septr", "Adam", 2, 50, 1e-4, 0.8, 0.9, (1, 3), (2, 5), (1e-4, 1e-8), "cnn-blobs"),
    _p("densenet121", "Adam", 64, 50, 1e-4, 0.8, 0.9, (1, 3), (2, 5), (1e-4, 5e-8), "cnn-blobs"),
]}


# Desk-scale experiments: nested dicts in config-file layout.
DESK_PRESETS = {
    "mlp-spirals": {
        "experiment": {"architecture": "mlp", "hidden": (128, 64), "epochs": 40,
                       "batch_size": 16},
        "dataset": {"kind": "spirals", "classes": 3, "per_class": 100,
                    "test_per_class": 100, "noise": 0.5, "seed": 7},
        "optimizer": {"kind": "sgd", "momentum": 0.9},
        "lerac": {"eta_base": 0.05, "eta_last": 5e-7, "k": 5},
        "plateau": {"patience": 5, "early_stop_patience": 12},
    },
    "mlp-blobs": {
        "experiment": {"architecture": "mlp", "hidden": (128, 64), "epochs": 20,
                       "batch_size": 32},
        "dataset": {"kind": "blobs", "classes": 4, "per_class": 100,
                    "test_per_class": 50, "noise": 1.0, "seed": 3},
        "optimizer": {"kind": "sgd", "momentum": 0.9},
        "lerac": {"eta_base": 0.05, "eta_last": 5e-7, "k": 5},
    },
    "cnn-blobs": {
        "experiment": {"architecture": "cnn", "epochs": 15, "batch_size": 32},
        "dataset": {"kind": "blobs", "classes": 4, "per_class": 100,
                    "test_per_class": 50, "noise": 2.0, "seed": 11,
                    "shape": (1, 12, 12)},
        "optimizer": {"kind": "sgd", "momentum": 0.9},
        "lerac": {"eta_base": 0.02, "eta_last": 2e-7, "k": 5},
        "cbs": {"sigma0": 1.0, "d": 0.9, "u": 2},
    },
}


def table_overrides(preset: TablePreset) -> dict:
    """Config-file sections implied by a table preset."""
    eta_first, eta_last = preset.eta_range
    return {
        "experiment": {"batch_size": preset.batch[0]},
        "optimizer": {"kind": preset.engine_optimizer},
        "lerac": {"eta_base": preset.eta_base, "eta_first": eta_first,
                  "eta_last": eta_last, "k": preset.k_default, "c": 10.0},
        "cbs": {"sigma0": preset.sigma, "d": preset.d, "u": preset.u_default},
    }


def preset_names() -> list[str]:
    return sorted(DESK_PRESETS) + sorted(TABLE_PRESETS)
