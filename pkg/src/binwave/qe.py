"""Quantization-error analytics for square-wave binarization of Laplace weights.

Model: latent weights W ~ Laplace(0, b). The pre-binarization value is
what = sin(omega0 * W); binarization replaces it by gamma * sign(what).
Everything here depends on (omega0, b) only through the product
x = omega0 * b, and the closed forms are evaluated in that variable.

Key quantities (all cross-checked by the Monte Carlo helpers below):

* density of what: summing the Laplace density over every preimage of the
  sine (solutions w_k = ((-1)^k * arcsin(what) + pi*k) / omega0) gives

      f(what) = [exp(-|u|/x) + 2*cosh(u/x) / (e^(pi/x) - 1)]
                / (2 * x * sqrt(1 - what^2)),   u = arcsin(what)

  The geometric tail over |k| >= 1 contributes *twice* cosh(u/x)/(e^(pi/x)-1)
  because +k and -k pair into a cosh; with that factor the density
  integrates to exactly 1 (see pdf_normalization).
* optimal scale: gamma = E|sin(omega0 W)| = x / ((x^2+1) * tanh(pi/(2x)))
* closed-form error:
      QE(gamma) = 2x^2/(4x^2+1) - 2*gamma*gamma_opt + gamma^2
  which at gamma = gamma_opt peaks at QE = 0.102835 for x = 0.954882 and
  tends to 1/2 - 4/pi^2 as x -> infinity.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

__all__ = [
    "LaplaceModel",
    "QEReport",
    "fit_laplace",
    "pdf_transformed",
    "pdf_partial_sum",
    "pdf_grid",
    "pdf_normalization",
    "gamma_optimal",
    "qe_closed_form",
    "qe_curve",
    "find_max_qe",
    "laplace_samples",
    "mc_gamma",
    "mc_qe",
    "write_qe_csv",
    "write_pdf_csv",
]

# seed for every Monte Carlo oracle in this module; fixed so the documented
# tolerances are reproducible
MC_SEED = 20240214


@dataclass(frozen=True)
class LaplaceModel:
    """Zero-mean Laplace weight model with scale b > 0."""

    b: float

    def __post_init__(self):
        if not self.b > 0:
            raise ValueError(f"Laplace scale must be positive, got {self.b}")


@dataclass
class QEReport:
    """One analytics record: frequency, model, scale, error, optional density grid."""

    omega0: float
    b: float
    gamma: float
    qe: float
    pdf_grid: list[tuple[float, float]] = field(default_factory=list)


def fit_laplace(w) -> LaplaceModel:
    """Maximum-likelihood Laplace scale of zero-mean weights: b = mean|w|."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("fit_laplace got an empty tensor")
    b = float(np.mean(np.abs(w)))
    if b == 0.0:
        raise ValueError("fit_laplace needs at least one nonzero weight (b must be > 0)")
    return LaplaceModel(b)


def _tail_coeff(x: float) -> float:
    # 2 / (e^(pi/x) - 1), evaluated without overflow for tiny x
    p = np.pi / x
    if p > 700.0:
        return 2.0 * np.exp(-p)
    return 2.0 / np.expm1(p)


def _pdf_theta(theta: np.ndarray, x: float) -> np.ndarray:
    """Density of arcsin(what) on (-pi/2, pi/2); smooth, no endpoint singularity."""
    p = np.pi / x
    if p > 700.0:
        tail = np.exp((theta - np.pi) / x) + np.exp(-(theta + np.pi) / x)
    else:
        tail = 2.0 * np.cosh(theta / x) / np.expm1(p)
    return (np.exp(-np.abs(theta) / x) + tail) / (2.0 * x)


def pdf_transformed(w_hat, omega0: float, model: LaplaceModel):
    """Closed-form density of sin(omega0 * W) at w_hat, |w_hat| < 1.

    The density has integrable singularities at +-1, so the endpoints are
    out of domain.
    """
    if not omega0 > 0:
        raise ValueError(f"pdf_transformed needs omega0 > 0, got {omega0}")
    w_arr = np.asarray(w_hat, dtype=np.float64)
    if np.any(np.abs(w_arr) >= 1.0):
        raise ValueError("pdf_transformed is defined for |w_hat| < 1 only")
    x = omega0 * model.b
    theta = np.arcsin(w_arr)
    out = _pdf_theta(theta, x) / np.sqrt(1.0 - w_arr * w_arr)
    if np.isscalar(w_hat) or np.asarray(w_hat).ndim == 0:
        return float(out)
    return out


def pdf_partial_sum(w_hat, omega0: float, model: LaplaceModel, terms: int):
    """Truncated preimage-sum density over k in [-terms, terms].

    Each k contributes f_W(w_k) / |omega0 * cos(omega0 * w_k)| with
    w_k = ((-1)^k * arcsin(w_hat) + pi*k) / omega0. Terms are positive, so
    the partial sums increase monotonically to the closed form.
    """
    if not omega0 > 0:
        raise ValueError(f"pdf_partial_sum needs omega0 > 0, got {omega0}")
    if terms < 0:
        raise ValueError(f"pdf_partial_sum needs terms >= 0, got {terms}")
    w_arr = np.asarray(w_hat, dtype=np.float64)
    if np.any(np.abs(w_arr) >= 1.0):
        raise ValueError("pdf_partial_sum is defined for |w_hat| < 1 only")
    b = model.b
    theta = np.arcsin(w_arr)
    denom = 2.0 * b * omega0 * np.sqrt(1.0 - w_arr * w_arr)
    total = np.zeros_like(w_arr)
    for k in range(-terms, terms + 1):
        wk_scaled = (-1.0) ** k * theta + np.pi * k  # omega0 * w_k
        total = total + np.exp(-np.abs(wk_scaled) / (omega0 * b))
    out = total / denom
    if np.isscalar(w_hat) or np.asarray(w_hat).ndim == 0:
        return float(out)
    return out


def pdf_grid(omega0: float, model: LaplaceModel, points: int = 401,
             theta_margin: float = 1e-3) -> tuple[np.ndarray, np.ndarray]:
    """Density sampled on a singularity-aware grid inside (-1, 1).

    Grid points are what = sin(theta) for uniform theta, which clusters
    samples near the +-1 endpoints where the density blows up.
    """
    if points < 2:
        raise ValueError(f"pdf_grid needs at least 2 points, got {points}")
    theta = np.linspace(-np.pi / 2 + theta_margin, np.pi / 2 - theta_margin, points)
    w_hat = np.sin(theta)
    return w_hat, pdf_transformed(w_hat, omega0, model)


def pdf_normalization(omega0: float, model: LaplaceModel) -> float:
    """Integral of the transformed density over (-1, 1).

    Uses the substitution what = sin(theta), which removes the
    (1 - what^2)^(-1/2) endpoint singularity; the remaining integrand is
    smooth except for a kink at theta = 0.
    """
    x = omega0 * model.b
    val, _ = integrate.quad(lambda th: _pdf_theta(np.asarray(th), x),
                            -np.pi / 2, np.pi / 2, points=[0.0], limit=200,
                            epsabs=1e-12, epsrel=1e-12)
    return float(val)


def _gamma_x(x: float) -> float:
    # E|sin| in the product variable; tanh keeps tiny x overflow-free
    return x / ((x * x + 1.0) * np.tanh(np.pi / (2.0 * x)))


def _qe_x(x: float, gamma: float) -> float:
    return 2.0 * x * x / (4.0 * x * x + 1.0) - 2.0 * gamma * _gamma_x(x) + gamma * gamma


def gamma_optimal(omega0: float, model: LaplaceModel) -> float:
    """Scale minimizing the expected squared binarization error.

    Equals E|sin(omega0 W)| = x * (e^(pi/x) + 1) / ((x^2+1) * (e^(pi/x) - 1))
    with x = omega0 * b; evaluated via tanh so tiny and huge x stay finite.
    Tends to 2/pi as x -> infinity and to 0 as x -> 0.
    """
    if not omega0 > 0:
        raise ValueError(f"gamma_optimal needs omega0 > 0, got {omega0}")
    return float(_gamma_x(omega0 * model.b))


def qe_closed_form(omega0: float, model: LaplaceModel, gamma: float) -> float:
    """Closed-form expected squared error E[(sin(omega0 W) - gamma*sign(...))^2].

    QE = 2x^2/(4x^2+1) - 2*gamma*gamma_opt(x) + gamma^2 with x = omega0*b.
    Quadratic in gamma with its minimum at gamma_opt.
    """
    if not omega0 > 0:
        raise ValueError(f"qe_closed_form needs omega0 > 0, got {omega0}")
    if gamma < 0:
        raise ValueError(f"qe_closed_form needs gamma >= 0, got {gamma}")
    return float(_qe_x(omega0 * model.b, gamma))


def qe_curve(model: LaplaceModel, omega_grid) -> list[QEReport]:
    """Per-frequency reports with the optimal scale substituted."""
    omega_grid = np.asarray(omega_grid, dtype=np.float64)
    if np.any(omega_grid <= 0):
        raise ValueError("qe_curve needs positive frequencies")
    reports = []
    for omega0 in omega_grid:
        g = gamma_optimal(float(omega0), model)
        reports.append(QEReport(omega0=float(omega0), b=model.b, gamma=g,
                                qe=qe_closed_form(float(omega0), model, g)))
    return reports


def find_max_qe(model: LaplaceModel, lo: float = 1e-3, hi: float = 1e3,
                tol: float = 1e-6) -> tuple[float, float]:
    """Locate the interior maximum of QE(omega0) by golden-section search.

    Returns (omega0_at_max, qe_max). The maximizer satisfies
    omega0 * b = 0.954882... regardless of b.
    """
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    # search in log(x) since the curve lives on a log frequency axis
    a, c = np.log(lo * model.b), np.log(hi * model.b)

    def f(lx):
        return -_qe_x(np.exp(lx), _gamma_x(np.exp(lx)))

    d = c - invphi * (c - a)
    e = a + invphi * (c - a)
    fd, fe = f(d), f(e)
    while (c - a) > tol:
        if fd < fe:
            c, e, fe = e, d, fd
            d = c - invphi * (c - a)
            fd = f(d)
        else:
            a, d, fd = d, e, fe
            e = a + invphi * (c - a)
            fe = f(e)
    x_star = np.exp(0.5 * (a + c))
    return float(x_star / model.b), float(_qe_x(x_star, _gamma_x(x_star)))


# ---------------------------------------------------------------------------
# Monte Carlo oracles (independent route, fixed seed)
# ---------------------------------------------------------------------------

def laplace_samples(b: float, n: int, seed: int = MC_SEED) -> np.ndarray:
    """Seeded zero-mean Laplace draws used by every sampling oracle."""
    return np.random.default_rng(seed).laplace(0.0, b, size=n)


def mc_gamma(omega0: float, b: float, n: int = 10_000_000,
             seed: int = MC_SEED, samples: np.ndarray | None = None) -> float:
    """Sample estimate of E|sin(omega0 W)|; pass standard samples to reuse draws."""
    w = b * samples if samples is not None else laplace_samples(b, n, seed)
    return float(np.mean(np.abs(np.sin(omega0 * w))))


def mc_qe(omega0: float, b: float, gamma: float, n: int = 10_000_000,
          seed: int = MC_SEED, samples: np.ndarray | None = None) -> float:
    """Sample estimate of E[(sin(omega0 W) - gamma * sign(sin(omega0 W)))^2]."""
    w = b * samples if samples is not None else laplace_samples(b, n, seed)
    s = np.sin(omega0 * w)
    d = s - gamma * np.where(s >= 0, 1.0, -1.0)
    return float(np.mean(d * d))


# ---------------------------------------------------------------------------
# CSV emitters consumed by the CLI plot-data commands
# ---------------------------------------------------------------------------

def write_qe_csv(path, reports: list[QEReport]) -> None:
    """Columns (omega0, b, gamma, qe), one row per report."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["omega0", "b", "gamma", "qe"])
        for r in reports:
            writer.writerow([repr(r.omega0), repr(r.b), repr(r.gamma), repr(r.qe)])


def write_pdf_csv(path, w_hat: np.ndarray, density: np.ndarray) -> None:
    """Columns (w_hat, density) for one density grid."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["w_hat", "density"])
        for w, d in zip(w_hat, density):
            writer.writerow([repr(float(w)), repr(float(d))])
