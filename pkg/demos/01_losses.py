# Robust losses and the consistency term
#
# Every loss here takes a posterior p and a label y. We start with a few
# hand-sized posteriors and watch how the families differ when the model is
# confidently wrong, which is exactly what a flipped label looks like.

import numpy as np

from augloss import losses
from augloss.losses import LossSpec

# A posterior that puts most of its mass on class 0.
p = np.array([0.90, 0.05, 0.05])

for y in (0, 1):
    print(f"label {y}:")
    print("  ce        ", round(losses.ce_loss(p, y), 4))
    print("  focal g=2 ", round(losses.focal_loss(p, y, 2.0), 4))
    print("  nce+rce   ", round(losses.nce_rce_loss(p, y, 1.0, 0.1, 4.0), 4))
    print("  alpha=3   ", round(losses.alpha_loss(p, y, 3.0), 4))

# With label 1 the cross entropy is -log(0.05), about 3. The alpha-loss stays
# below alpha / (alpha - 1) = 1.5 no matter how wrong the model is, so a
# mislabeled example cannot dominate a batch.

# alpha sweeps between cross entropy (alpha=1) and 1 - p[y] (alpha=inf).
q = np.linspace(0.01, 0.99, 5)
for a in (1.0, 1.5, 2.0, 3.0, np.inf):
    vals = [losses.alpha_loss([v, 1 - v], 0, a) for v in q]
    print(f"alpha={a:<4}", np.round(vals, 3))

# The consistency term compares the posteriors of an image and its two
# augmented views. Identical views cost nothing; three different one-hot
# posteriors cost ln 3, the maximum for three views.
same = np.tile(p, (3, 1))
print("JS identical:", losses.js_consistency(same))
print("JS one-hots :", losses.js_consistency(np.eye(3)), "ln 3 =", np.log(3))

# The full objective is the base loss on the original view plus lam * JS.
views = np.array([[0.90, 0.05, 0.05], [0.70, 0.20, 0.10], [0.60, 0.10, 0.30]])
spec = LossSpec("alpha", alpha=3.0, lam=12.0)
print("objective:", round(losses.augloss_objective(views, 0, spec), 4))

# Gradients with respect to the logits are analytic. Each row sums to zero
# because softmax is invariant to adding a constant to the logits.
logits = np.log(views)
g = losses.loss_gradient(spec, logits, 0)
print(np.round(g, 4))
print("row sums:", np.round(g.sum(axis=1), 12))
