# A small noisy-label experiment, start to finish
#
# Train with 30% symmetric noise, then test on clean labels, both on clean
# images and on the ten corruption kinds. This is a short version of what
# `augloss run` does for a whole grid. It takes under a minute.

import tempfile
import time
from pathlib import Path

import numpy as np

from augloss import corruptions, data, evaluation, model, noise
from augloss.augment import AugmentPolicy
from augloss.losses import LossSpec

full = data.synth_shapes(10, 200, 16, noise_sd=0.15, seed=0)
train_set, test_set = data.split(full, 0.8, seed=0)
labels = noise.apply_noise(train_set.labels, noise.symmetric_transition(10, 0.3), seed=1)
print("training labels flipped:", noise.flip_fraction(train_set.labels, labels))

suite = corruptions.build_corrupted_suite(test_set.images, seed=0)
print("corruptions:", ", ".join(suite))

# lr0 = 0.02 keeps the MLP stable once the lam = 12 consistency term is on.
config = model.TrainConfig(epochs=10, lr0=0.02, seed=0)
runs = {
    "NoAug + CE": (LossSpec("ce"), None),
    "NoAug + alpha(3)": (LossSpec("alpha", alpha=3.0), None),
    "AugMix + CE": (LossSpec("ce"), AugmentPolicy()),
    "AugMix + alpha(2)": (LossSpec("alpha", alpha=2.0), AugmentPolicy()),
}
for name, (spec, policy) in runs.items():
    start = time.time()
    params, history = model.train(train_set.with_labels(labels), config, spec, policy)
    clean = evaluation.clean_error(params, test_set.images, test_set.labels)
    per_kind, mce = evaluation.mce(params, suite, test_set.labels)
    worst = max(per_kind, key=per_kind.get)
    print(f"{name:18s} clean {100 * clean:5.1f}%  mCE {100 * mce:5.1f}%  "
          f"worst {worst} {100 * per_kind[worst]:.0f}%  ({time.time() - start:.0f}s)")

# The trained parameters take raw [0, 1] images, so they can be saved and
# reloaded without the training statistics.
with tempfile.TemporaryDirectory() as tmp:
    model.save_checkpoint(Path(tmp) / "demo.agls", params)
    again = model.load_checkpoint(Path(tmp) / "demo.agls")
print("reloaded predictions agree:",
      np.array_equal(evaluation.predictions(again, test_set.images),
                     evaluation.predictions(params, test_set.images)))
