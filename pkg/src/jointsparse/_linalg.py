"""Small symmetric-matrix helpers shared by the solvers and the theory checks."""

import numpy as np

SYM_TOL = 1e-10
PSD_TOL = 1e-8


def symmetrize(M, check=True):
    """Return (M + M.T) / 2, optionally asserting M was symmetric to begin with."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if check:
        scale = 1.0 + (np.abs(M).max() if M.size else 0.0)
        asym = np.abs(M - M.T).max() if M.size else 0.0
        if asym > SYM_TOL * scale:
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3e})")
    return 0.5 * (M + M.T)


def psd_tolerance(eigvals):
    top = float(np.max(eigvals)) if len(eigvals) else 0.0
    return PSD_TOL * (1.0 + max(top, 0.0))


def clip_psd(M):
    """Project a symmetric matrix onto the PSD cone by eigenvalue clipping."""
    w, V = np.linalg.eigh(M)
    w = np.maximum(w, 0.0)
    return (V * w) @ V.T


def psd_factor(M, rel_tol=PSD_TOL):
    """Return F with F @ F.T == M restricted to the eigenvalues above tolerance.

    F has one column per retained eigenpair; it may have zero columns.
    """
    w, V = np.linalg.eigh(M)
    keep = w > rel_tol * (1.0 + max(float(w.max()) if w.size else 0.0, 0.0))
    return V[:, keep] * np.sqrt(w[keep])


def psd_power(M, power, floor=0.0):
    """Matrix power of a PSD matrix via eigh.

    Eigenvalues are clipped at zero first. For negative powers, eigenvalues at
    or below ``floor`` map to zero (pseudo-inverse semantics).
    """
    w, V = np.linalg.eigh(symmetrize(M, check=False))
    w = np.maximum(w, 0.0)
    out = np.zeros_like(w)
    if power < 0:
        keep = w > floor
        out[keep] = w[keep] ** power
    else:
        out = w ** power
    return (V * out) @ V.T
