"""Named configurations for the standard fair-classification, domain
adaptation and lighting-invariance setups.

Each preset is a flat mapping of config keys (the same keys accepted by the
command line and config files).  ``beta`` is the per-row MMD weight: the
loss multiplies it by the batch size, so ``beta=100`` at batch size 100 is a
penalty weight of ``100 * N_batch``.
"""

from __future__ import annotations

PRESETS: dict[str, dict] = {
    "adult": {
        "hidden_z1_encoder": (100,),
        "hidden_x_decoder": (100,),
        "hidden_z2_encoder": (100,),
        "hidden_z1_decoder": (100,),
        "z1_dim": 50,
        "z2_dim": 50,
        "likelihood": "bernoulli",
        "preprocess": "binarize",
        "alpha": 1.0,
        "beta": 1.0,
    },
    "german": {
        "hidden_z1_encoder": (60,),
        "hidden_x_decoder": (60,),
        "hidden_z2_encoder": (60,),
        "hidden_z1_decoder": (60,),
        "z1_dim": 30,
        "z2_dim": 30,
        "likelihood": "bernoulli",
        "preprocess": "binarize",
        "alpha": 1.0,
        "beta": 1.0,
    },
    "health": {
        "hidden_z1_encoder": (300,),
        "hidden_x_decoder": (300,),
        "hidden_z2_encoder": (150,),
        "hidden_z1_decoder": (150,),
        "z1_dim": 50,
        "z2_dim": 50,
        "likelihood": "bernoulli",
        "preprocess": "binarize",
        "alpha": 1.0,
        "beta": 1.0,
    },
    # source domain is s=0; target labels are hidden from training.
    # alpha = 100 * (N_source + N_target) / N_source with a 50/50 mix
    "amazon": {
        "hidden_z1_encoder": (500,),
        "hidden_x_decoder": (500,),
        "hidden_z2_encoder": (300,),
        "hidden_z1_decoder": (300,),
        "z1_dim": 50,
        "z2_dim": 50,
        "likelihood": "poisson",
        "preprocess": "hide_target_labels",
        "mixing_ratio": 0.5,
        "alpha": 200.0,
        "beta": 100.0,
    },
    "yaleb": {
        "hidden_z1_encoder": (400,),
        "hidden_x_decoder": (400,),
        "hidden_z2_encoder": (100,),
        "hidden_z1_decoder": (100,),
        "z1_dim": 50,
        "z2_dim": 50,
        "likelihood": "gaussian_sigmoid_mean",
        "preprocess": "minmax",
        "alpha": 200.0,
        "beta": 200.0,
    },
    # small desk-scale setup for the generated data
    "synthetic": {
        "hidden_z1_encoder": (50,),
        "hidden_x_decoder": (50,),
        "hidden_z2_encoder": (50,),
        "hidden_z1_decoder": (50,),
        "z1_dim": 16,
        "z2_dim": 16,
        "likelihood": "gaussian_sigmoid_mean",
        "preprocess": "minmax",
        "alpha": 1.0,
        "beta": 1.0,
    },
}


def get_preset(name: str) -> dict:
    try:
        return dict(PRESETS[name])
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
