"""Gaussian random field sampling for initial conditions.

Three covariance families: squared-exponential (rbf) and Matern fields drawn
through a Cholesky factor of the covariance matrix, and periodic
inverse-Laplacian power spectra drawn by filtering white noise in Fourier
space. Factors are cached per spec so repeated draws only cost a mat-vec.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn, kv


@dataclass
class GrfSpec:
    """Covariance recipe plus the sampling grid.

    kind='rbf':            sigma**2 * exp(-r^2 / (2 * length**2))
    kind='matern':         variance * 2^(1-eta)/Gamma(eta) * z^eta * K_eta(z),
                           z = sqrt(2 eta) r / length
    kind='spectral_power': amplitude * (-Laplacian + shift I)^(-power) on the
                           periodic box, i.e. Fourier mode k is scaled by
                           sqrt(amplitude * (4 pi^2 |k|^2 + shift)^(-power))
    """

    kind: str = "rbf"
    grid: int = 256
    rank: int = 1
    domain: float = 1.0
    endpoint: bool = False      # True: include both boundary points (reflective grids)
    sigma: float = 0.1          # rbf std
    variance: float = 0.1       # matern sigma^2
    length: float = 0.1
    eta: float = 10.0
    amplitude: float = 1.0
    shift: float = 1.0
    power: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("rbf", "matern", "spectral_power"):
            raise ValueError(f"unknown GRF kind {self.kind!r}")
        if self.rank not in (1, 2):
            raise ValueError("rank must be 1 or 2")
        for name in ("sigma", "variance", "length", "eta", "amplitude", "shift"):
            if getattr(self, name) <= 0:
                raise ValueError(f"GrfSpec.{name} must be positive")

    def coords(self):
        if self.endpoint:
            x = np.linspace(0.0, self.domain, self.grid)
        else:
            x = np.arange(self.grid) * (self.domain / self.grid)
        if self.rank == 1:
            return x[:, None]
        xx, yy = np.meshgrid(x, x, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    def shape(self):
        return (self.grid,) * self.rank


def rbf_kernel(r, sigma, length):
    return sigma ** 2 * np.exp(-r ** 2 / (2.0 * length ** 2))

def matern_kernel(r, variance, length, eta):
    z = np.sqrt(2.0 * eta) * r / length
    out = np.empty_like(z)
    small = z < 1e-10
    out[small] = variance
    zs = z[~small]
    out[~small] = variance * (2.0 ** (1.0 - eta) / gamma_fn(eta)) * zs ** eta * kv(eta, zs)
    return out


_CHOL_CACHE = {}


def _cholesky_factor(spec):
    key = (spec.kind, spec.grid, spec.rank, spec.domain, spec.endpoint,
           spec.sigma, spec.variance, spec.length, spec.eta)
    fac = _CHOL_CACHE.get(key)
    if fac is not None:
        return fac
    pts = spec.coords()
    r = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
    if spec.kind == "rbf":
        cov = rbf_kernel(r, spec.sigma, spec.length)
    else:
        cov = matern_kernel(r, spec.variance, spec.length, spec.eta)
    cov[np.diag_indices_from(cov)] += 1e-10
    try:
        fac = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(
            "covariance not positive definite after 1e-10 jitter") from exc
    _CHOL_CACHE[key] = fac
    return fac


def _spectral_multiplier(spec):
    n = spec.grid
    k = np.fft.fftfreq(n, d=1.0 / n)
    if spec.rank == 1:
        ksq = k ** 2
    else:
        kx, ky = np.meshgrid(k, k, indexing="ij")
        ksq = kx ** 2 + ky ** 2
    return np.sqrt(spec.amplitude * (4.0 * np.pi ** 2 * ksq + spec.shift) ** (-spec.power))


def sample_grf(spec, rng=None):
    """One zero-mean draw with the spec's covariance, shaped spec.shape()."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    if spec.kind in ("rbf", "matern"):
        fac = _cholesky_factor(spec)
        xi = rng.standard_normal(fac.shape[0])
        return (fac @ xi).reshape(spec.shape())
    mult = _spectral_multiplier(spec)
    white = rng.standard_normal(spec.shape())
    if spec.rank == 1:
        field = np.fft.ifft(np.fft.fft(white) * mult)
    else:
        field = np.fft.ifft2(np.fft.fft2(white) * mult)
    return np.real(field) * np.sqrt(white.size)


def square_wave_ic(center, width, height, x):
    """Square pulse plus a half-ellipse cap that vanishes at the pulse edges.

    The cap slope parameter is fixed at 2*height/width so the elliptical term
    is exactly zero at center +/- width/2.
    """
    a = 2.0 * height / width
    box = height * ((x >= center - 0.5 * width) & (x <= center + 0.5 * width))
    cap = np.sqrt(np.maximum(height ** 2 - (a * (x - center)) ** 2, 0.0))
    return box + cap
