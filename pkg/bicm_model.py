"""Bipartite Configuration Model: maximum-entropy null model with expected
country and sector degrees fixed to the observed ones.

Links are independent with p_cs = x_c y_s / (1 + x_c y_s). Nodes with degree
zero or full degree are peeled off before solving and get deterministic
probabilities, as are cells forced by a tight Gale-Ryser bound (which
splits the problem into independent blocks). The remaining nodes of each
block are grouped into degree classes and the
multipliers are found by damped fixed-point iteration on their logarithms,
switching to Newton steps when the fixed point stalls.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import expit, logsumexp, xlogy

from exceptions import ConfigError, ConvergenceError, DegreeSequenceError, PanelDataError
from rca_network import BipartiteNetwork, DegreeSequences, degrees
from utils import write_csv

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 10_000
DEFAULT_DAMPING = 0.5
STALL_WINDOW = 25
STALL_RATIO = 0.5


@dataclass(frozen=True)
class BicmModel:
    """Fitted multipliers and link probabilities for one year.

    `probabilities` is authoritative. Peeled nodes carry multiplier 0
    (never linked) or inf (always linked within the active sectors).
    """

    year: Optional[int]
    countries: Tuple[str, ...]
    sectors: Tuple[str, ...]
    x: np.ndarray
    y: np.ndarray
    probabilities: np.ndarray
    residual: float
    iterations: int
    method: str = "fixed-point"

    @property
    def shape(self) -> Tuple[int, int]:
        return self.probabilities.shape

    @property
    def expected_diversification(self) -> np.ndarray:
        return self.probabilities.sum(axis=1)

    @property
    def expected_ubiquity(self) -> np.ndarray:
        return self.probabilities.sum(axis=0)

    @property
    def is_deterministic(self) -> bool:
        p = self.probabilities
        return bool(np.all((p == 0) | (p == 1)))

    @classmethod
    def from_probabilities(cls, probabilities: np.ndarray, year: Optional[int] = None,
                           countries: Optional[Sequence[str]] = None,
                           sectors: Optional[Sequence[str]] = None) -> "BicmModel":
        """Wrap a probability matrix directly (no fit); multipliers are NaN."""
        p = np.asarray(probabilities, dtype=float)
        if p.ndim != 2 or np.any((p < 0) | (p > 1)):
            raise PanelDataError("link probabilities must form a matrix with entries in [0, 1]")
        C, S = p.shape
        return cls(
            year=year,
            countries=tuple(countries) if countries is not None else tuple(f"c{i}" for i in range(C)),
            sectors=tuple(sectors) if sectors is not None else tuple(f"s{j}" for j in range(S)),
            x=np.full(C, np.nan),
            y=np.full(S, np.nan),
            probabilities=p,
            residual=np.nan,
            iterations=0,
            method="given",
        )

    def with_multipliers(self, x: np.ndarray, y: np.ndarray) -> "BicmModel":
        """Same nodes, probabilities recomputed from finite positive multipliers."""
        xy = np.outer(x, y)
        return BicmModel(self.year, self.countries, self.sectors, np.asarray(x, float), np.asarray(y, float),
                         xy / (1.0 + xy), np.nan, 0, "given")

    def to_frame(self) -> pd.DataFrame:
        """Multipliers per node plus diagnostics rows."""
        year = self.year if self.year is not None else -1
        nodes = pd.concat([
            pd.DataFrame({"year": year, "layer": "country", "node": list(self.countries),
                          "multiplier": self.x, "expected_degree": self.expected_diversification}),
            pd.DataFrame({"year": year, "layer": "sector", "node": list(self.sectors),
                          "multiplier": self.y, "expected_degree": self.expected_ubiquity}),
        ], ignore_index=True)
        diagnostics = pd.DataFrame({
            "year": year,
            "layer": "diagnostic",
            "node": ["residual", "iterations"],
            "multiplier": [self.residual, float(self.iterations)],
            "expected_degree": np.nan,
        })
        return pd.concat([nodes, diagnostics], ignore_index=True)


class BicmSolver:
    """Solves the C + S degree constraints of the model."""

    def __init__(self, tolerance: float = DEFAULT_TOLERANCE, max_iterations: int = DEFAULT_MAX_ITERATIONS,
                 damping: float = DEFAULT_DAMPING):
        if not 0 < damping <= 1:
            raise ConfigError(f"damping must lie in (0, 1], got {damping}")
        self.tolerance = tolerance
        self.max_iterations = max_iterations
        self.damping = damping

    def fit_network(self, net: BipartiteNetwork) -> BicmModel:
        return self.fit(degrees(net), year=net.year, countries=net.countries, sectors=net.sectors)

    def fit(self, degree_sequences: DegreeSequences, year: Optional[int] = None,
            countries: Optional[Sequence[str]] = None, sectors: Optional[Sequence[str]] = None) -> BicmModel:
        """Find multipliers whose expected degrees match the observed ones."""
        d = np.asarray(degree_sequences.diversification, dtype=np.int64)
        u = np.asarray(degree_sequences.ubiquity, dtype=np.int64)
        C, S = len(d), len(u)
        self._check_sequences(d, u)

        p, x, y, iterations, method = self._fit_block(d, u, year)

        residual = float(max(np.abs(p.sum(axis=1) - d).max(initial=0.0), np.abs(p.sum(axis=0) - u).max(initial=0.0)))
        if residual > self.tolerance:
            raise ConvergenceError(residual, iterations, year)

        logger.debug(f"Fitted null model{'' if year is None else f' for {year}'}: {iterations} iterations "
                     f"({method}), residual {residual:.2e}")
        return BicmModel(
            year=year,
            countries=tuple(countries) if countries is not None else tuple(f"c{i}" for i in range(C)),
            sectors=tuple(sectors) if sectors is not None else tuple(f"s{j}" for j in range(S)),
            x=x,
            y=y,
            probabilities=p,
            residual=residual,
            iterations=iterations,
            method=method,
        )

    def _fit_block(self, d: np.ndarray, u: np.ndarray, year: Optional[int]):
        """Probabilities and multipliers for one block of rows and columns.

        Returns (p, x, y, iterations, method). Blocks whose degrees force
        some cells without emptying or filling a whole row or column are
        split into two independent blocks and solved recursively.
        """
        C, S = len(d), len(u)
        p = np.full((C, S), np.nan)
        x = np.where(d == 0, 0.0, np.inf)
        y = np.where(u == 0, 0.0, np.inf)
        if C == 0 or S == 0:
            return p, x, y, 0, "deterministic"

        rows, cols, d_res, u_res = self._peel(d, u, p)
        if not rows.any():
            return p, x, y, 0, "deterministic"

        row_idx, col_idx = np.flatnonzero(rows), np.flatnonzero(cols)
        d_act, u_act = d_res[row_idx], u_res[col_idx]
        split = self._tight_cut(d_act, u_act)
        if split is None:
            row_classes, row_inverse, row_counts = np.unique(d_act, return_inverse=True, return_counts=True)
            col_classes, col_inverse, col_counts = np.unique(u_act, return_inverse=True, return_counts=True)
            theta, eta, iterations, method = self._solve_classes(
                row_classes.astype(float), row_counts.astype(float),
                col_classes.astype(float), col_counts.astype(float), year,
            )
            row_theta = theta[row_inverse.ravel()]
            col_eta = eta[col_inverse.ravel()]
            p[np.ix_(row_idx, col_idx)] = expit(row_theta[:, None] + col_eta[None, :])
            x[row_idx] = np.exp(row_theta)
            y[col_idx] = np.exp(col_eta)
            return p, x, y, iterations, method

        # Top rows fill every column of degree >= k; the others never touch columns of degree <= k
        top, k = split
        low, high = u_act < k, u_act > k
        p[np.ix_(row_idx[top], col_idx[~low])] = 1.0
        p[np.ix_(row_idx[~top], col_idx[~high])] = 0.0
        y[col_idx[u_act == k]] = np.inf

        iterations, methods = 0, []
        blocks = (
            (row_idx[top], col_idx[low], d_act[top] - int((~low).sum()), u_act[low]),
            (row_idx[~top], col_idx[high], d_act[~top], u_act[high] - k),
        )
        for block_rows, block_cols, block_d, block_u in blocks:
            p_b, x_b, y_b, n_b, method_b = self._fit_block(block_d, block_u, year)
            p[np.ix_(block_rows, block_cols)] = p_b
            x[block_rows] = x_b
            y[block_cols] = y_b
            iterations += n_b
            methods.append(method_b)
        method = next((m for m in methods if m != "deterministic"), "deterministic")
        return p, x, y, iterations, method

    @staticmethod
    def _tight_cut(d: np.ndarray, u: np.ndarray) -> Optional[Tuple[np.ndarray, int]]:
        """First k whose k largest row degrees meet the Gale-Ryser bound with equality.

        Returns a mask of those k rows, or None when every bound is strict
        and the multipliers are finite. A violated bound means no network
        has these degrees.
        """
        order = np.argsort(-d, kind="stable")
        prefix = np.cumsum(d[order])
        for k in range(1, len(d) + 1):
            bound = int(np.minimum(u, k).sum())
            if prefix[k - 1] > bound:
                raise DegreeSequenceError("degree sequences cannot be realised by any bipartite network")
            if prefix[k - 1] == bound and k < len(d):
                top = np.zeros(len(d), dtype=bool)
                top[order[:k]] = True
                return top, k
        return None

    @staticmethod
    def _check_sequences(d: np.ndarray, u: np.ndarray) -> None:
        C, S = len(d), len(u)
        if (d < 0).any() or (d > S).any():
            raise DegreeSequenceError(f"country degrees must lie in [0, {S}]")
        if (u < 0).any() or (u > C).any():
            raise DegreeSequenceError(f"sector degrees must lie in [0, {C}]")
        if d.sum() != u.sum():
            raise DegreeSequenceError(f"degree sums differ: countries {d.sum()} vs sectors {u.sum()}")

    @staticmethod
    def _peel(d: np.ndarray, u: np.ndarray, p: np.ndarray):
        """Fix rows/columns that must be all-zero or all-one, repeatedly."""
        rows = np.ones(len(d), dtype=bool)
        cols = np.ones(len(u), dtype=bool)
        d_res = d.astype(np.int64).copy()
        u_res = u.astype(np.int64).copy()

        changed = True
        while changed:
            changed = False
            n_cols = int(cols.sum())
            empty = rows & (d_res == 0)
            full = rows & (d_res == n_cols) & ~empty
            if empty.any() or full.any():
                p[np.ix_(empty, cols)] = 0.0
                p[np.ix_(full, cols)] = 1.0
                u_res[cols] -= int(full.sum())
                rows &= ~(empty | full)
                changed = True

            n_rows = int(rows.sum())
            empty = cols & (u_res == 0)
            full = cols & (u_res == n_rows) & ~empty
            if empty.any() or full.any():
                p[np.ix_(rows, empty)] = 0.0
                p[np.ix_(rows, full)] = 1.0
                d_res[rows] -= int(full.sum())
                cols &= ~(empty | full)
                changed = True

            if (u_res[cols] < 0).any() or (u_res[cols] > rows.sum()).any() \
                    or (d_res[rows] < 0).any() or (d_res[rows] > cols.sum()).any():
                raise DegreeSequenceError("degree sequences cannot be realised by any bipartite network")

        return rows, cols, d_res, u_res

    def _solve_classes(self, d: np.ndarray, m: np.ndarray, u: np.ndarray, n: np.ndarray,
                       year: Optional[int]) -> Tuple[np.ndarray, np.ndarray, int, str]:
        """Solve for one log-multiplier per degree class.

        d, m: row-class degrees and sizes; u, n: column-class degrees and sizes.
        """
        links = float((d * m).sum())
        theta = np.log(d / np.sqrt(links))
        eta = np.log(u / np.sqrt(links))
        log_d, log_u = np.log(d), np.log(u)
        log_m, log_n = np.log(m), np.log(n)

        residual = self._residual(theta, eta, d, m, u, n)
        history = [residual]
        method = "fixed-point"
        iteration = 0
        while residual > self.tolerance and iteration < self.max_iterations:
            iteration += 1
            stalled = len(history) > STALL_WINDOW and residual > STALL_RATIO * history[-STALL_WINDOW - 1]
            if stalled:
                step = self._newton_step(theta, eta, d, m, u, n, residual)
                if step is not None:
                    theta, eta, residual = step
                    method = "fixed-point+newton"
                    history.append(residual)
                    continue

            # x_i = d_i / sum_j n_j y_j / (1 + x_i y_j), then the same for y with the new x
            s = theta[:, None] + eta[None, :]
            theta_fp = log_d - logsumexp(log_n[None, :] + eta[None, :] - np.logaddexp(0.0, s), axis=1)
            theta = (1 - self.damping) * theta + self.damping * theta_fp
            s = theta[:, None] + eta[None, :]
            eta_fp = log_u - logsumexp(log_m[:, None] + theta[:, None] - np.logaddexp(0.0, s), axis=0)
            eta = (1 - self.damping) * eta + self.damping * eta_fp

            residual = self._residual(theta, eta, d, m, u, n)
            history.append(residual)

        if residual > self.tolerance:
            raise ConvergenceError(residual, iteration, year)
        return theta, eta, iteration, method

    @staticmethod
    def _residual(theta, eta, d, m, u, n) -> float:
        p = expit(theta[:, None] + eta[None, :])
        row_gap = np.abs(p @ n - d).max()
        col_gap = np.abs(m @ p - u).max()
        return float(max(row_gap, col_gap))

    def _newton_step(self, theta, eta, d, m, u, n, residual):
        """Newton step on log-multipliers with backtracking; None if no progress."""
        p = expit(theta[:, None] + eta[None, :])
        w = p * (1 - p)
        F = np.concatenate([p @ n - d, m @ p - u])

        R, K = len(d), len(u)
        J = np.zeros((R + K, R + K))
        J[:R, :R] = np.diag(w @ n)
        J[:R, R:] = w * n[None, :]
        J[R:, :R] = (w * m[:, None]).T
        J[R:, R:] = np.diag(m @ w)
        delta = np.linalg.lstsq(J, -F, rcond=None)[0]

        step = 1.0
        for _ in range(40):
            theta_new = theta + step * delta[:R]
            eta_new = eta + step * delta[R:]
            new_residual = self._residual(theta_new, eta_new, d, m, u, n)
            if new_residual < residual:
                return theta_new, eta_new, new_residual
            step /= 2
        return None


def matrix_log_probability(model: BicmModel, net: BipartiteNetwork) -> float:
    """Log-probability of `net` under the model; -inf if it breaks a certain cell."""
    if net.matrix.shape != model.shape:
        raise PanelDataError(f"network shape {net.matrix.shape} does not match model shape {model.shape}")
    return float(log_probability_array(model.probabilities, net.matrix))


def log_probability_array(p: np.ndarray, matrices: np.ndarray) -> np.ndarray:
    """Log-probability of each matrix in a (..., C, S) stack."""
    m = matrices.astype(float)
    return (xlogy(m, p) + xlogy(1.0 - m, 1.0 - p)).sum(axis=(-2, -1))


def analytic_motif_mean(model: BicmModel) -> float:
    """Exact ensemble mean of the co-specialization motif under independent links."""
    p = model.probabilities
    column = p.sum(axis=0)
    return float(0.5 * (column ** 2 - (p ** 2).sum(axis=0)).sum())


def write_model(model: BicmModel, directory: Path, label: str = "") -> Path:
    suffix = f"_{label}" if label else ""
    return write_csv(model.to_frame(), Path(directory) / f"bicm_{model.year}{suffix}.csv")
