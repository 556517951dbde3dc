"""Walk through pseudo-labeling and the two training losses on toy numbers.

Run:  python3 demos/03_losses_and_pseudo_labels.py
"""

import math

import numpy as np
import torch

from rebalance_ssl import pseudo_label, supervised_loss, unsupervised_loss

# pseudo-labels: argmax kept only when the max probability clears the threshold
for probs in ([0.97, 0.02, 0.01], [0.80, 0.15, 0.05], [1 / 3, 1 / 3, 1 / 3]):
    print(f"probs={probs} tau=0.95 ->", pseudo_label(np.array(probs), 0.95))

# supervised loss: mean cross-entropy over the labeled batch
logits = torch.tensor([[2.0, -1.0, 0.0], [0.0, 0.0, 0.0]])
labels = torch.tensor([0, 2])
print("\nsupervised loss:", float(supervised_loss(logits, labels)))
print("uniform 2-class logits give ln 2 =", math.log(2))

# consistency loss: the weak view's confident prediction supervises the strong view
weak_probs = torch.tensor([[0.96, 0.04], [0.60, 0.40]])  # only the first passes tau
strong_logits = torch.log(torch.tensor([[0.70, 0.30], [0.50, 0.50]]))
loss, mask_fraction = unsupervised_loss(weak_probs, strong_logits, tau=0.95)
print("\nunsupervised loss:", float(loss), "(= -ln(0.7)/2 =", -math.log(0.7) / 2, ")")
print("mask fraction:", mask_fraction)
print("low-confidence examples shrink the loss: the denominator is the full batch")
