"""
Training losses with analytic gradients
=======================================

Every loss takes probabilities and returns (value, gradient). This walks
the worked two-pixel consistency example, checks one gradient entry against
a finite difference, and composes the weighted total. The teacher update and
pseudo-label helpers round it off.
"""

import numpy as np

from pointpaste.losses import (EmaState, LossComponents, LossWeights, MaskSet,
                               SwapPolicy, cross_entropy_loss,
                               cross_modal_kl_loss, ema_update, mask_filter,
                               mask_consistency_loss, pseudo_label_from_probs,
                               swap_pseudo_labels, total_loss)

# two pixels in one mask, predictions [1,0] and [0,1]:
# deviation term 2 * 0.5^2 / (2*2) + entropy of the mean [0.5, 0.5] = 0.25 + ln 2
probs = np.array([[[1.0, 0.0], [0.0, 1.0]]])
masks = MaskSet(mask_id=np.array([[1, 1]]), areas={1: 2})
value, grad = mask_consistency_loss(probs, masks)
print(f"two-pixel consistency: {value:.6f}  (0.25 + ln 2 = {0.25 + np.log(2):.6f})")

# gradient spot check against a central finite difference
rng = np.random.default_rng(0)
raw = rng.random((4, 6, 3)) + 0.05
p = raw / raw.sum(axis=-1, keepdims=True)
img = rng.integers(0, 3, (4, 6))
ms = mask_filter(img, area_fraction_cap=1.0)
value, grad = mask_consistency_loss(p, ms)
idx = (2, 3, 1)
h = 1e-5
bumped = p.copy(); bumped[idx] += h
dipped = p.copy(); dipped[idx] -= h
fd = (mask_consistency_loss(bumped, ms)[0]
      - mask_consistency_loss(dipped, ms)[0]) / (2 * h)
print(f"consistency grad{idx}: analytic {grad[idx]:+.8f}, fd {fd:+.8f}")

# cross entropy over four points, one ignored
probs2 = np.array([[0.7, 0.2, 0.1],
                   [0.1, 0.8, 0.1],
                   [0.3, 0.3, 0.4],
                   [0.9, 0.05, 0.05]])
labels = np.array([0, 1, 2, 0xFFFF], dtype=np.uint32)
ce, _ = cross_entropy_loss(probs2, labels)
print(f"cross entropy (3 live points): {ce:.6f}")

# KL(main || aux), gradient flows into aux only
main = np.array([[1.0, 0.0]])
aux = np.array([[0.5, 0.5]])
kl, kg = cross_modal_kl_loss(main, aux)
print(f"KL one-hot vs uniform: {kl:.6f}  (ln 2 = {np.log(2):.6f})")

comp = LossComponents(source_ce=1.0, source_xm=1.0, target_ce=1.0,
                      target_xm=1.0, insert_ce=1.0, mask_consistency=1.0)
print(f"total with default weights, all components 1: "
      f"{total_loss(comp, LossWeights()):.2f}")

# teacher EMA: ten updates toward a constant student shrink the gap by 0.99^10
teacher = EmaState(params={"w": np.zeros(3)})
student = {"w": np.ones(3)}
for _ in range(10):
    teacher = ema_update(teacher, student)
print(f"teacher after 10 EMA steps: {teacher.params['w'][0]:.6f} "
      f"(1 - 0.99^10 = {1 - 0.99 ** 10:.6f})")

# pseudo-labels: confident rows keep their argmax, the rest become ignore
pl = pseudo_label_from_probs(np.array([[0.95, 0.05], [0.6, 0.4]]), threshold=0.9)
print(f"pseudo labels at 0.9: {pl.tolist()}  (0xFFFF = ignore)")

swapped, mask = swap_pseudo_labels(np.zeros(6, dtype=np.uint32),
                                   np.ones(6, dtype=np.uint32),
                                   SwapPolicy(probability=0.7, per_point=True),
                                   seed=4)
print(f"per-point swap at p=0.7: {swapped.tolist()}")
