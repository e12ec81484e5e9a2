"""Principal Component Pursuit by ADMM.

Splits ``M = L + S`` with ``L`` low rank and ``S`` sparse by minimizing
``||L||_* + lam * ||S||_1`` subject to ``L + S = M``.  The iteration is the
plain alternating-directions scheme with a single fixed penalty ``mu``::

    L <- D_{1/mu}(M - S - Y/mu)
    S <- S_{lam/mu}(M - L - Y/mu)
    Y <- Y + mu * (L + S - M)
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, FormatError, NumericalError
from .numkernel import as_matrix, format_matrix, format_real, l1_norm, parse_matrix, soft_threshold, svd

DIVERGENCE_WINDOW = 50


@dataclass(frozen=True)
class PcpConfig:
    """Solver settings.  ``lam=None`` means :func:`default_lambda` of the input."""

    lam: float = None
    mu: object = "auto"
    rel_tol: float = 1e-7
    max_iter: int = 1000

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ValueError("lam must be positive, got %r" % (self.lam,))
        if isinstance(self.mu, str):
            if self.mu != "auto":
                raise ValueError("mu must be a positive number or 'auto'")
        elif not self.mu > 0:
            raise ValueError("mu must be positive, got %r" % (self.mu,))
        if not 0 < self.rel_tol < 1:
            raise ValueError("rel_tol must lie in (0, 1), got %r" % (self.rel_tol,))
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")

    @classmethod
    def from_n(cls, n, **kwargs):
        """The ``lam = 1/n`` convention used in the ablation sweeps."""
        return cls(lam=1.0 / n, **kwargs)


@dataclass(frozen=True)
class PcpSolution:
    l: np.ndarray
    s: np.ndarray
    iterations: int
    final_residual: float
    converged: bool
    lam: float = 0.0
    mu: float = 0.0
    residuals: tuple = field(default=(), repr=False)


def auto_mu(m):
    """Default penalty ``rows*cols / (4 * ||m||_1)``."""
    a = as_matrix(m)
    total = l1_norm(a)
    if total == 0.0:
        raise ValueError("auto_mu is undefined for the zero matrix")
    return a.size / (4.0 * total)


def default_lambda(m):
    """``1 / sqrt(max(rows, cols))``."""
    a = as_matrix(m)
    return 1.0 / np.sqrt(max(a.shape))


def pcp(m, config=None):
    """Run the ADMM from ``S = 0, Y = 0`` until both the relative feasibility
    residual ``||M - L - S||_F / ||M||_F`` and the dual residual
    ``mu * ||S - S_prev||_F / ||M||_F`` drop to ``config.rel_tol``.

    The dual check matters when ``lam`` is small: feasibility alone can be met
    while ``L`` still carries mass that the next iterations move into ``S``.

    Raises :class:`DivergenceError` if the residual grows for 50 consecutive
    iterations and :class:`NumericalError` on non-finite iterates.
    """
    config = config or PcpConfig()
    a = as_matrix(m)
    lam = default_lambda(a) if config.lam is None else float(config.lam)
    norm_m = np.linalg.norm(a)
    if norm_m == 0.0:
        zero = np.zeros_like(a)
        return PcpSolution(zero, zero.copy(), 0, 0.0, True, lam=lam, mu=0.0)
    mu = auto_mu(a) if config.mu == "auto" else float(config.mu)

    s = np.zeros_like(a)
    y = np.zeros_like(a)
    l = s
    prev = None
    history = []
    growing = 0
    residual = np.inf
    for it in range(1, config.max_iter + 1):
        prev = svd(a - s - y / mu, start=prev)
        l = (prev.u * soft_threshold(prev.sigma, 1.0 / mu)) @ prev.v.T
        s_old = s
        s = soft_threshold(a - l - y / mu, lam / mu)
        gap = l + s - a
        y = y + mu * gap
        residual = np.linalg.norm(gap) / norm_m
        if not np.isfinite(residual) or not np.all(np.isfinite(y)):
            raise NumericalError("non-finite iterate at iteration %d" % it, residual=residual, iteration=it)
        growing = growing + 1 if history and residual > history[-1] else 0
        history.append(residual)
        dual = mu * np.linalg.norm(s - s_old) / norm_m
        if residual <= config.rel_tol and dual <= config.rel_tol:
            return PcpSolution(l, s, it, residual, True, lam=lam, mu=mu, residuals=tuple(history))
        if growing >= DIVERGENCE_WINDOW:
            raise DivergenceError(
                "pcp diverging: residual grew for %d consecutive iterations (now %.3g at iteration %d)"
                % (growing, residual, it),
                residual=residual,
                iteration=it,
                history=history,
            )
    return PcpSolution(l, s, config.max_iter, residual, False, lam=lam, mu=mu, residuals=tuple(history))


def pcp_objective(l, s, lam):
    return float(np.sum(svd(l).sigma) + lam * np.sum(np.abs(s)))


def format_solution(sol):
    """Diagnostics header ``iterations residual converged`` then L and S blocks."""
    head = "%d %s %d\n" % (sol.iterations, format_real(sol.final_residual), int(sol.converged))
    return head + format_matrix(sol.l) + format_matrix(sol.s)


def parse_solution(text):
    lines = text.splitlines()
    if not lines:
        raise FormatError("missing diagnostics header", line=1)
    head = lines[0].split()
    if len(head) != 3:
        raise FormatError("diagnostics header must be 'iterations residual converged'", line=1)
    try:
        iterations, residual, converged = int(head[0]), float(head[1]), bool(int(head[2]))
    except ValueError as exc:
        raise FormatError(str(exc), line=1)
    l, nxt = parse_matrix(lines, 1, what="L")
    s, nxt = parse_matrix(lines, nxt, what="S")
    if s.shape != l.shape:
        raise FormatError("L and S shapes differ", line=nxt)
    return PcpSolution(l, s, iterations, residual, converged)
