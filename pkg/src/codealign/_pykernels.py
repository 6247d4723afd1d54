"""Pure-numpy kernels; same contract and summation order as ``_ckernels``."""
import numpy as np


def pairwise_sqdist(A, B):
    A = np.ascontiguousarray(A, dtype=np.float64)
    B = np.ascontiguousarray(B, dtype=np.float64)
    out = np.zeros((A.shape[0], B.shape[0]), dtype=np.float64)
    # one feature column at a time: sequential accumulation, like the C loop
    for j in range(A.shape[1]):
        diff = A[:, j, None] - B[None, :, j]
        out += diff * diff
    return out


def nearest(Z, P):
    d2 = pairwise_sqdist(Z, P)
    # argmin returns the first occurrence, i.e. the lowest index on ties
    index = np.argmin(d2, axis=1).astype(np.int64)
    return index, d2[np.arange(d2.shape[0]), index]
