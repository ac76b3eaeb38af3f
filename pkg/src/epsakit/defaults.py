"""Frozen desk-scale defaults.

These values pin down every fixture the acceptance checks rely on
(dataset, reduced model, step budget). Bump DEFAULTS_VERSION when any of
them changes so downstream regressions are attributable.
"""

from .training import TrainConfig

DEFAULTS_VERSION = 1

# Synthetic overfitting fixture: 32 samples, 4 classes, 64x64 images.
TOY_DATASET = {"seed": 7, "m": 32, "classes": 4, "size": 64}

# Reduced backbone: two stages at widths 32/64, narrow stem.
TOY_MODEL = {"widths": (32, 64), "blocks": (1, 1), "stem_channels": 32, "seed": 11}

# Step budget frozen after the first successful calibration run:
# epochs * ceil(32/batch_size) steps in total.
TOY_TRAIN = TrainConfig(
    lr=0.05,
    momentum=0.9,
    weight_decay=1e-4,
    label_smoothing=0.1,
    lr_decay_every=30,
    batch_size=8,
    epochs=50,
    seed=3,
)
TOY_STEP_BUDGET = TOY_TRAIN.epochs * -(-TOY_DATASET["m"] // TOY_TRAIN.batch_size)
TOY_TARGET_ACCURACY = 0.95

GRADCHECK_TOLERANCE = 1e-4
GRADCHECK_EPSILON = 1e-5
