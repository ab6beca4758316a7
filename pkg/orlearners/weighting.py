"""
Clipped inverse-propensity weights shared by the weighted representation
learners and the orthogonal target losses.
"""
import numpy as np
import torch

CLIP_THRESHOLD = 0.05


def clipped_inverse_weight(arm: int, A, pi1):
    """
    1{A = arm} * 1{pi_arm >= 0.05} / pi_arm with pi_0 = 1 - pi_1.

    Works on torch tensors (keeping the graph) and on numpy arrays alike;
    values lie in {0} or [1, 20].
    """
    if isinstance(pi1, torch.Tensor):
        pi_arm = pi1 if arm == 1 else 1.0 - pi1
        keep = (A == arm) & (pi_arm >= CLIP_THRESHOLD)
        return torch.where(keep, 1.0 / pi_arm, torch.zeros_like(pi_arm))
    pi1 = np.asarray(pi1, dtype=float)
    pi_arm = pi1 if arm == 1 else 1.0 - pi1
    keep = (np.asarray(A) == arm) & (pi_arm >= CLIP_THRESHOLD)
    return np.where(keep, 1.0 / pi_arm, 0.0)


def factual_inverse_weight(A, pi1):
    """Clipped 1/pi_A(x) of the observed arm."""
    return clipped_inverse_weight(1, A, pi1) + clipped_inverse_weight(0, A, pi1)
