"""Matrix-free conjugate gradient for symmetric positive-definite systems.

Supports warm starts, an iteration cap, relative-residual early exit against
||b||_2, and per-solve iteration accounting for the adaptive-complexity
diagnostics. Solving a batch exits only once every element satisfies the
tolerance.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NumericalBreakdownError, ParameterError


@dataclass
class CgConfig:
    max_iters: int = 250
    rel_tol: float = 1e-3
    record_history: bool = False

    def __post_init__(self):
        if self.max_iters < 1:
            raise ParameterError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (0.0 < self.rel_tol < 1.0):
            raise ParameterError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")


@dataclass
class CgReport:
    iterations_used: int
    final_rel_residual: float
    converged: bool
    residual_history: list | None = None

    def to_dict(self) -> dict:
        d = {
            "iterations_used": self.iterations_used,
            "final_rel_residual": self.final_rel_residual,
            "converged": self.converged,
        }
        if self.residual_history is not None:
            d["residual_history"] = list(self.residual_history)
        return d


def _vdot(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.vdot(a, b))


def cg_solve(A, b: np.ndarray, x0: np.ndarray | None = None,
             cfg: CgConfig | None = None):
    """Solve A x = b for symmetric positive-definite A.

    Returns (x, CgReport). Exits once ||b - A x|| / ||b|| <= rel_tol; at the
    iteration cap the iterate with the smallest recorded residual is returned
    with converged=False. A non-finite residual or a direction with
    <p, A p> <= 0 raises NumericalBreakdownError since the operators built in
    this package are positive definite by construction.
    """
    if cfg is None:
        cfg = CgConfig()
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    history: list | None = [] if cfg.record_history else None
    if bnorm == 0.0:
        return np.zeros_like(b), CgReport(0, 0.0, True, history)

    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - A.apply(x)
    rs = _vdot(r, r)
    if not np.isfinite(rs):
        raise NumericalBreakdownError("non-finite initial residual")
    rel = np.sqrt(rs) / bnorm
    if history is not None:
        history.append(rel)
    if rel <= cfg.rel_tol:
        return x, CgReport(0, rel, True, history)

    best_x, best_rel = x.copy(), rel
    p = r.copy()
    iterations = 0
    for k in range(1, cfg.max_iters + 1):
        Ap = A.apply(p)
        pAp = _vdot(p, Ap)
        if not np.isfinite(pAp):
            raise NumericalBreakdownError("non-finite curvature <p, Ap>")
        if pAp <= 0.0:
            raise NumericalBreakdownError(
                f"indefinite direction: <p, Ap> = {pAp} at iteration {k}"
            )
        step = rs / pAp
        x = x + step * p
        r = r - step * Ap
        rs_new = _vdot(r, r)
        if not np.isfinite(rs_new):
            raise NumericalBreakdownError("non-finite residual during iteration")
        rel = np.sqrt(rs_new) / bnorm
        iterations = k
        if history is not None:
            history.append(rel)
        if rel < best_rel:
            best_rel = rel
            best_x = x.copy()
        if rel <= cfg.rel_tol:
            return x, CgReport(k, rel, True, history)
        p = r + (rs_new / rs) * p
        rs = rs_new
    return best_x, CgReport(iterations, best_rel, False, history)


def cg_solve_batch(systems, cfg: CgConfig | None = None):
    """Solve a batch of (A, b, x0) triples with a shared iteration loop.

    The loop exits only when all elements satisfy the tolerance (or the cap
    is hit). Elements whose relative residual falls three decades below the
    tolerance freeze to avoid degenerate divisions; everything else keeps
    refining until the batch-wide exit.
    """
    if cfg is None:
        cfg = CgConfig()
    n = len(systems)
    xs, rs_list, p_list, r_list, bnorms = [], [], [], [], []
    rels = np.zeros(n)
    iters = np.zeros(n, dtype=int)
    active = np.ones(n, dtype=bool)
    for i, (A, b, x0) in enumerate(systems):
        b = np.asarray(b, dtype=np.float64)
        bnorm = float(np.linalg.norm(b))
        x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
        r = b - A.apply(x) if bnorm > 0 else np.zeros_like(b)
        xs.append(x)
        r_list.append(r)
        p_list.append(r.copy())
        rs_list.append(_vdot(r, r))
        bnorms.append(bnorm)
        rels[i] = np.sqrt(rs_list[i]) / bnorm if bnorm > 0 else 0.0
        if bnorm == 0.0:
            xs[i] = np.zeros_like(b)
            active[i] = False

    freeze_rel = cfg.rel_tol * 1e-3
    for k in range(1, cfg.max_iters + 1):
        if np.all(rels <= cfg.rel_tol):
            break
        for i, (A, b, x0) in enumerate(systems):
            if not active[i] or rels[i] <= freeze_rel:
                continue
            Ap = A.apply(p_list[i])
            pAp = _vdot(p_list[i], Ap)
            if not np.isfinite(pAp) or pAp <= 0.0:
                raise NumericalBreakdownError(
                    f"batch element {i}: indefinite or non-finite curvature"
                )
            step = rs_list[i] / pAp
            xs[i] = xs[i] + step * p_list[i]
            r_list[i] = r_list[i] - step * Ap
            rs_new = _vdot(r_list[i], r_list[i])
            rels[i] = np.sqrt(rs_new) / bnorms[i]
            iters[i] = k
            p_list[i] = r_list[i] + (rs_new / rs_list[i]) * p_list[i]
            rs_list[i] = rs_new

    reports = [
        CgReport(int(iters[i]), float(rels[i]), bool(rels[i] <= cfg.rel_tol))
        for i in range(n)
    ]
    return xs, reports
