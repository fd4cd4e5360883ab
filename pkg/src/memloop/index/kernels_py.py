"""NumPy fallback for the scoring kernels.

Same contract as the compiled extension: rows of ``mat`` are unit-norm
float64 vectors, so dot products are cosine similarities.
"""

import numpy as np


def all_scores(mat: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Similarity of every row of ``mat`` against ``query``."""
    return mat @ query


def scores_for_rows(mat: np.ndarray, rows: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Similarity of the selected rows of ``mat`` against ``query``."""
    return mat[rows] @ query
