"""Influence of training samples on held-out risk.

The score of training sample i against a validation set is
phi_i = -g_va . H^{-1} grad_i, where H is the regularized training Hessian,
g_va the summed validation log-loss gradient, and grad_i the regularized
per-sample training gradient. Negative phi marks samples whose upweighting
lowers validation risk. All solves are matrix-free conjugate gradient with a
mixed diagonal/identity preconditioner.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .data import SparseDataset
from .model import ModelParams

# Plain-CG fallback kicks in after this many iterations without a new best
# preconditioned residual.
STALL_LIMIT = 10


class ConvergenceError(RuntimeError):
    """A conjugate-gradient solve missed its residual tolerance."""


@dataclass(frozen=True)
class PcgConfig:
    """Solver knobs: preconditioner mix, relative tolerance, iteration cap.

    ``alpha_precond`` blends the exact Hessian diagonal (1.0) with the
    identity (0.0); the inverse of the blend is applied each iteration.
    """

    alpha_precond: float = 1.0
    tol: float = 1e-8
    max_iter: int = 1000

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha_precond <= 1.0:
            raise ValueError(f"alpha_precond must be in [0, 1], got {self.alpha_precond}")
        if not self.tol > 0.0:
            raise ValueError(f"tol must be positive, got {self.tol}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")


@dataclass(frozen=True)
class PcgInfo:
    """Outcome of one solve: iterations, final residual norm, flags."""

    iters: int
    residual: float
    converged: bool
    restarted: bool = False


@dataclass(frozen=True)
class InfluenceReport:
    """Influence scores for every training row plus solver diagnostics.

    ``psi_norms`` (per-sample parameter-influence norms) is filled only when
    requested; it costs one linear solve per row.
    """

    phi: np.ndarray
    psi_norms: np.ndarray | None
    cg_iters: int
    residual: float

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=np.float64)
        if not np.all(np.isfinite(phi)):
            raise ValueError("phi must be finite")
        object.__setattr__(self, "phi", phi)
        if self.psi_norms is not None:
            ns = np.asarray(self.psi_norms, dtype=np.float64)
            if ns.shape != phi.shape:
                raise ValueError("psi_norms length must match phi")
            if not np.all(np.isfinite(ns)) or np.any(ns < 0):
                raise ValueError("psi_norms must be finite and nonnegative")
            object.__setattr__(self, "psi_norms", ns)


def inverse_hvp_pcg(params: ModelParams, tr: SparseDataset, v: np.ndarray,
                    cfg: PcgConfig = PcgConfig()) -> tuple[np.ndarray, PcgInfo]:
    """Solve H t = v by preconditioned conjugate gradient.

    Terminates when ||H t - v|| <= tol ||v||. If the preconditioned residual
    makes no progress for STALL_LIMIT iterations the preconditioner is
    dropped and the solve restarts as plain CG from the current iterate. On
    hitting max_iter the best iterate seen is returned with converged False;
    callers decide whether that is fatal.
    """
    if not params.reg_c > 0.0:
        raise ValueError("inverse HVP needs reg_c > 0 for a positive definite Hessian")
    if tr.n_rows == 0:
        raise ValueError("empty training set")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params.dim,):
        raise ValueError(f"vector shape {v.shape} does not match dimension {params.dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("right-hand side must be finite")

    vnorm = float(np.linalg.norm(v))
    if vnorm == 0.0:
        return np.zeros_like(v), PcgInfo(0, 0.0, True)

    alpha = cfg.alpha_precond
    mdiag: np.ndarray | None = None
    if alpha > 0.0:
        mdiag = alpha * model.hessian_diag(params, tr) + (1.0 - alpha)

    t = np.zeros_like(v)
    r = v.copy()
    z = r / mdiag if mdiag is not None else r.copy()
    p = z.copy()
    rz = float(r @ z)
    best_pre = rz
    best_res = vnorm
    t_best = t.copy()
    stall = 0
    restarted = False

    for k in range(1, cfg.max_iter + 1):
        q = model.hvp(params, tr, p)
        pq = float(p @ q)
        if pq <= 0.0:
            break
        a = rz / pq
        t = t + a * p
        r = r - a * q
        res = float(np.linalg.norm(r))
        if res < best_res:
            best_res = res
            t_best = t
        if res <= cfg.tol * vnorm:
            return t, PcgInfo(k, res, True, restarted)

        z = r / mdiag if mdiag is not None else r
        rz_new = float(r @ z)
        if rz_new < best_pre:
            best_pre = rz_new
            stall = 0
        else:
            stall += 1
        if mdiag is not None and stall >= STALL_LIMIT:
            # Preconditioned residual is stuck; fall back to plain CG.
            mdiag = None
            restarted = True
            stall = 0
            z = r.copy()
            rz = float(r @ z)
            p = z.copy()
            best_pre = rz
            continue
        p = z + (rz_new / rz) * p
        rz = rz_new

    return t_best, PcgInfo(cfg.max_iter, best_res, False, restarted)


def _validation_gradient(params: ModelParams, va: SparseDataset) -> np.ndarray:
    """Summed unregularized log-loss gradient over the validation rows."""
    resid = model._sigma(params, va) - va.y
    return va.X.T @ resid


def compute_phi(params: ModelParams, tr: SparseDataset, va: SparseDataset,
                cfg: PcgConfig = PcgConfig()) -> InfluenceReport:
    """Influence of every training row on the summed validation log loss.

    One linear solve total: s = H^{-1} g_va, then
    phi_i = -((p_i - y_i) x_i . s + C theta . s). A solve that misses its
    tolerance raises ConvergenceError rather than returning junk scores.
    """
    if va.n_rows == 0:
        raise ValueError("empty validation set")
    g_va = _validation_gradient(params, va)
    s, info = inverse_hvp_pcg(params, tr, g_va, cfg)
    if not info.converged:
        raise ConvergenceError(
            f"inverse HVP stopped at residual {info.residual:.3e} after {info.iters} iterations")
    resid = model._sigma(params, tr) - tr.y
    reg_term = params.reg_c * float(params.theta @ s)
    phi = -(resid * (tr.X @ s) + reg_term)
    return InfluenceReport(phi=phi, psi_norms=None, cg_iters=info.iters, residual=info.residual)


def compute_psi_norms(params: ModelParams, tr: SparseDataset,
                      cfg: PcgConfig = PcgConfig()) -> np.ndarray:
    """Norm of the parameter influence H^{-1} grad_i for every training row.

    Runs one conjugate-gradient solve per row, so cost scales linearly with
    the training set; rows with a zero gradient short-circuit to zero.
    """
    if tr.n_rows == 0:
        raise ValueError("empty training set")
    p = model._sigma(params, tr)
    base = params.reg_c * params.theta
    norms = np.empty(tr.n_rows)
    for i in range(tr.n_rows):
        idx, vals = tr.row(i)
        rhs = base.copy()
        rhs[idx] += (p[i] - tr.y[i]) * vals
        if not np.any(rhs):
            norms[i] = 0.0
            continue
        sol, info = inverse_hvp_pcg(params, tr, rhs, cfg)
        if not info.converged:
            raise ConvergenceError(
                f"sample {i}: inverse HVP stopped at residual {info.residual:.3e}")
        norms[i] = float(np.linalg.norm(sol))
    return norms


def _fmt(x: float) -> str:
    return repr(float(x))


def write_influence_csv(report: InfluenceReport, path: str) -> None:
    """Emit ``index,phi`` rows, with a ``psi_norm`` column when present."""
    with_psi = report.psi_norms is not None
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("index,phi,psi_norm\n" if with_psi else "index,phi\n")
            for i, value in enumerate(report.phi):
                if with_psi:
                    fh.write(f"{i},{_fmt(value)},{_fmt(report.psi_norms[i])}\n")
                else:
                    fh.write(f"{i},{_fmt(value)}\n")
    except OSError as exc:
        raise RuntimeError(f"cannot write {path}: {exc}") from exc


def read_influence_csv(path: str) -> InfluenceReport:
    """Read scores written by ``write_influence_csv``; diagnostics are not stored."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
    except OSError as exc:
        raise RuntimeError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise ValueError(f"{path}: empty influence file")
    header = lines[0].split(",")
    if header[:2] != ["index", "phi"]:
        raise ValueError(f"{path}: unexpected header {lines[0]!r}")
    with_psi = len(header) == 3 and header[2] == "psi_norm"
    phi: list[float] = []
    psi: list[float] = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != (3 if with_psi else 2):
            raise ValueError(f"{path}: bad row {ln!r}")
        if int(parts[0]) != len(phi):
            raise ValueError(f"{path}: rows must be indexed 0..n-1 in order")
        phi.append(float(parts[1]))
        if with_psi:
            psi.append(float(parts[2]))
    return InfluenceReport(
        phi=np.asarray(phi),
        psi_norms=np.asarray(psi) if with_psi else None,
        cg_iters=0,
        residual=float("nan"),
    )
