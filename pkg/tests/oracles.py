"""Independent dense oracles for the matrix-free operators.

Everything here is assembled by explicit index loops or dense linear algebra,
never by calling the operator implementations under test.
"""

import numpy as np


def dense_valid_correlation_matrix(H, W, kernel):
    """Dense (Ho*Wo, H*W) matrix of valid cross correlation with `kernel`."""
    kh, kw = kernel.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    mat = np.zeros((Ho * Wo, H * W))
    for i in range(Ho):
        for j in range(Wo):
            row = i * Wo + j
            for u in range(kh):
                for v in range(kw):
                    mat[row, (i + u) * W + (j + v)] = kernel[u, v]
    return mat


def dense_blur_matrix(C, H, W, kernel):
    """Block-diagonal per-channel valid correlation."""
    block = dense_valid_correlation_matrix(H, W, kernel)
    n_out = block.shape[0]
    mat = np.zeros((C * n_out, C * H * W))
    for c in range(C):
        mat[c * n_out:(c + 1) * n_out, c * H * W:(c + 1) * H * W] = block
    return mat


def dense_bank_matrix(filters, H, W):
    """Dense matrix of a (F, C, kh, kw) valid-correlation bank on (C, H, W)."""
    F, C, kh, kw = filters.shape
    Ho, Wo = H - kh + 1, W - kw + 1
    mat = np.zeros((F * Ho * Wo, C * H * W))
    for f in range(F):
        for c in range(C):
            block = dense_valid_correlation_matrix(H, W, filters[f, c])
            mat[f * Ho * Wo:(f + 1) * Ho * Wo, c * H * W:(c + 1) * H * W] += block
    return mat


def dense_system_matrix(blur_mat, bank_mat, weights_flat, sigma2, alpha):
    """(1/sigma2) H^T H + G^T diag(w) G + alpha I, densely assembled."""
    n = blur_mat.shape[1]
    out = blur_mat.T @ blur_mat / sigma2
    if bank_mat is not None and bank_mat.shape[0] > 0:
        out = out + bank_mat.T @ (weights_flat[:, None] * bank_mat)
    return out + alpha * np.eye(n)


def dense_wiener_matrix(blur_mat, bank_mat, sigma2):
    """H^T H + sigma2 * Gw^T Gw, densely assembled."""
    out = blur_mat.T @ blur_mat
    if bank_mat is not None and bank_mat.shape[0] > 0:
        out = out + sigma2 * (bank_mat.T @ bank_mat)
    return out
