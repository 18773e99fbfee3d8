"""
Spatial cosine similarity between velocity fields.
"""

import numpy as np

from flow_edit_lab.core.latent import LatentState
from flow_edit_lab.errors import EmptyStateError

# Norms below this count as "no signal"
NORM_FLOOR = 1e-12


def spatial_cosine(a: LatentState, b: LatentState) -> float:
    """
    Cosine similarity averaged over spatial sites.

    Grid states compare the C-channel vector at every (h, w) site and average over the H*W
    sites; a site where either vector is (numerically) zero contributes 0. Flat states fall
    back to the plain cosine of the full vectors, again 0 when either norm vanishes.

    Args:
        a (LatentState): First state.
        b (LatentState): Second state, same layout as a.

    Returns:
        float: Similarity in [-1, 1].

    Raises:
        LayoutMismatchError: If the layouts differ.
        EmptyStateError: If the states hold no values.
    """
    a.require_same_layout(b)
    if a.layout.size == 0:
        msg = "cosine of an empty state"
        raise EmptyStateError(msg, layout=a.layout.to_record())

    if a.layout.is_grid:
        left, right = a.site_vectors(), b.site_vectors()
    else:
        left, right = a.flatten()[None, :], b.flatten()[None, :]

    left_norm = np.linalg.norm(left, axis=1)
    right_norm = np.linalg.norm(right, axis=1)
    valid = (left_norm >= NORM_FLOOR) & (right_norm >= NORM_FLOOR)
    dots = np.einsum("sc,sc->s", left, right)
    per_site = np.zeros(left.shape[0])
    per_site[valid] = dots[valid] / (left_norm[valid] * right_norm[valid])
    return float(np.clip(per_site.mean(), -1.0, 1.0))
