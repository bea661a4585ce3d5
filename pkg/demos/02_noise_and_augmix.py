# Label noise and AugMix views
#
# Noisy labels come from a row-stochastic transition matrix T, where T[i, j]
# is the chance that true class i is recorded as j. Augmented views come from
# short chains of image operations mixed back into the original.

import numpy as np

from augloss import augment, data, noise

np.set_printoptions(precision=3, suppress=True)

# Symmetric noise spreads eta evenly over the other classes.
t = noise.symmetric_transition(4, 0.4)
print(t)

# Asymmetric CIFAR-10 noise only moves mass to one similar class.
a = noise.asymmetric_transition_cifar10(0.4)
cat = noise.CIFAR10_CLASSES.index("cat")
print("cat row:", dict(zip(noise.CIFAR10_CLASSES, a[cat])))

# Sampling: each label draws from its row. The empirical matrix lands close
# to T, within a few binomial standard deviations per entry.
clean = np.arange(20_000) % 4
noisy = noise.apply_noise(clean, t, seed=0)
print("flip fraction:", noise.flip_fraction(clean, noisy))
print(noise.empirical_transition(clean, noisy, k=4))

# The synthetic dataset draws ten glyphs in two colors with pixel noise and
# small shifts.
ds = data.synth_shapes(10, 2, 16, noise_sd=0.1, seed=0)
print(ds.images.shape, ds.labels[:10], ds.class_names)

# One AugMix tuple: the original plus two independently mixed views.
policy = augment.AugmentPolicy(width=3, severity=3)
tup = augment.augment_tuple(ds.images[0], policy, seed=1)
for name, img in zip(tup._fields, tup):
    print(name, "mean", round(float(img.mean()), 3),
          "max change", round(float(np.abs(img - tup.orig).max()), 3))

# The individual operations can be applied directly with a magnitude in [0, 1].
x = ds.images[0]
for op in augment.OPS:
    out = augment.apply_op(x, op, 0.8, seed=2)
    print(f"{op:13s} mean abs change {np.abs(out - x).mean():.3f}")

# Without augmentation the tuple is (x, x, x) and the consistency term is 0.
print(all(v is x for v in augment.noaug_tuple(x)))
