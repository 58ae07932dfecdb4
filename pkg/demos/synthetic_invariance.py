"""Removing a nuisance factor from a learned representation.

Run with ``python3 demos/synthetic_invariance.py [epochs]`` (default 40;
the acceptance suite uses longer runs).  The generated data has a binary
nuisance ``s`` that shifts the features and agrees with the label ``y``
70% of the time.  Three representations are compared:

* the raw features,
* z1 from a model trained without the MMD penalty (beta = 0),
* z1 from the same model trained with the penalty.

For each one a logistic-regression probe tries to recover ``s``, and the
model's own classifier q(y|z1) reports label accuracy.
"""

import sys

from vfae.data import SyntheticSpec, generate_synthetic, minmax_scale
from vfae.evaluation import evaluate_model, evaluate_raw
from vfae.models import VFAE, ModelConfig
from vfae.presets import get_preset
from vfae.training import TrainConfig, train


def build(x_dim, seed=0):
    p = get_preset("synthetic")
    arch = {k: p[k] for k in ("hidden_z1_encoder", "hidden_x_decoder", "hidden_z2_encoder", "hidden_z1_decoder",
                              "z1_dim", "z2_dim", "likelihood")}
    return VFAE(ModelConfig(x_dim, 2, 2, seed=seed, **arch))


def main(epochs=40):
    d = minmax_scale(generate_synthetic(SyntheticSpec(n=4000, seed=0, correlation=0.4)))
    raw = evaluate_raw(d)
    print(f"s chance level        {raw['chance_s']:.3f}")
    print(f"raw x        s-probe  {raw['probe_s_linear']['accuracy']:.3f}")
    for beta in (0.0, 100.0):
        res = train(build(d.x_dim), d, TrainConfig(epochs=epochs, beta=beta, seed=0))
        rep = evaluate_model(res.averaged_model(), d, seed=0)
        print(f"beta = {beta:5g}  s-probe  {rep['probe_s_linear']['accuracy']:.3f}   "
              f"MLP s-probe {rep['probe_s_nonlinear']['accuracy']:.3f}   y {rep['y_accuracy']:.3f}   "
              f"discrimination {rep['discrimination']:.3f}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 40)
