"""Fourier complexity, simplicity-bias score and plasticity metrics.

Complexity of a function sampled on an n x n grid: take the 2-D DFT, bin
coefficient magnitudes by radial integer frequency k = round(|(kx, ky)|) with
symmetric indices in [-n/2, n/2), and return the magnitude-weighted mean of k
over k = 0..K with K = n // 2. The DC term is kept, so constants score 0.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import nets

C_FLOOR = 1e-6
DEFAULT_TAU = 0.01
DEFAULT_DORMANT_EPS = 1e-3
_CHUNK = 8192


@dataclass(frozen=True)
class GridSpec:
    half_width: float = 100.0
    divisions: int = 300

    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.divisions)

    def points(self) -> np.ndarray:
        """All grid points, row-major with x varying slowest: point[i * n + j] = (x_i, y_j)."""
        a = self.axis()
        xx, yy = np.meshgrid(a, a, indexing="ij")
        return np.stack([xx.ravel(), yy.ravel()], axis=1)

    @property
    def nyquist(self) -> int:
        return self.divisions // 2


NetFactory = Callable[[int], Callable[[np.ndarray], np.ndarray]]


def spec_factory(spec: nets.NetworkSpec) -> NetFactory:
    """Factory mapping an init seed to the (constant-weight) forward function."""
    def make(seed: int):
        params = nets.init_params(spec, seed)
        w = nets.bind(params)
        return lambda pts: nets.forward(spec, w, pts).out.data
    return make


def evaluate_on_grid(net_factory: NetFactory, seed: int, grid: GridSpec = GridSpec()) -> np.ndarray:
    """Evaluate a freshly initialized network on every grid point.

    No observation normalization is applied: the raw architecture is probed.
    """
    f = net_factory(seed)
    pts = grid.points()
    out = []
    for start in range(0, len(pts), _CHUNK):
        y = np.asarray(f(pts[start:start + _CHUNK]), dtype=np.float64)
        if y.ndim == 2 and y.shape[1] != 1 or y.ndim > 2:
            raise ValueError(f"network output must be scalar per point, got shape {y.shape}")
        out.append(y.reshape(-1))
    n = grid.divisions
    return np.concatenate(out).reshape(n, n)


def dft_magnitude(image: np.ndarray) -> np.ndarray:
    """|2-D DFT| of a finite real image, unnormalized, in numpy frequency order."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"image must be 2-D, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise ValueError("image contains non-finite values")
    return np.abs(np.fft.fft2(image))


def radial_spectrum(image: np.ndarray) -> np.ndarray:
    """Summed |DFT| magnitudes per radial integer frequency 0..min(n, m) // 2."""
    mag = dft_magnitude(image)
    n, m = mag.shape
    peak = mag.max()
    if peak == 0:
        return np.zeros(min(n, m) // 2 + 1)
    # Roundoff-level coefficients carry no signal.
    mag[mag < 1e-13 * peak] = 0.0
    kx = np.fft.fftfreq(n) * n
    ky = np.fft.fftfreq(m) * m
    k = np.rint(np.sqrt(kx[:, None] ** 2 + ky[None, :] ** 2)).astype(int)
    K = min(n, m) // 2
    keep = k <= K
    return np.bincount(k[keep], weights=mag[keep], minlength=K + 1)


def complexity(image) -> float:
    spec = radial_spectrum(image)
    total = spec.sum()
    if total == 0:
        return 0.0
    return float(np.dot(spec, np.arange(spec.size)) / total)


@dataclass
class SimplicityReport:
    arch: str
    complexities: list[float]
    score: float
    ci_low: float
    ci_high: float
    params: int = 0
    rsnorm_bypassed: bool = True
    image_standardized: bool = False

    @property
    def n_inits(self) -> int:
        return len(self.complexities)

    @property
    def mean_c(self) -> float:
        return math.fsum(self.complexities) / len(self.complexities)

    @property
    def inverse_values(self) -> list[float]:
        return [1.0 / (c + C_FLOOR) for c in self.complexities]


def init_seed(seed: int, index: int) -> int:
    """Seed of the ``index``-th initialization under root ``seed``."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def summarize(arch: str, complexities, params: int = 0) -> SimplicityReport:
    cs = [float(c) for c in complexities]
    inv = [1.0 / (c + C_FLOOR) for c in cs]
    n = len(inv)
    s = math.fsum(inv) / n
    var = math.fsum((v - s) ** 2 for v in inv) / (n - 1) if n > 1 else 0.0
    half = 1.96 * math.sqrt(var / n)
    return SimplicityReport(arch, cs, s, s - half, s + half, params)


def simplicity_score(net_factory: NetFactory, n_inits: int = 100, grid: GridSpec = GridSpec(),
                     *, seed: int = 0, arch: str = "", params: int = 0,
                     workers: int = 1) -> SimplicityReport:
    """Mean of 1 / (c + c_floor) over ``n_inits`` random initializations."""
    if n_inits < 2:
        raise ValueError("n_inits must be at least 2")

    def one(i):
        return complexity(evaluate_on_grid(net_factory, init_seed(seed, i), grid))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            cs = list(pool.map(one, range(n_inits)))
    else:
        cs = [one(i) for i in range(n_inits)]
    return summarize(arch, cs, params)


def dump_image(path, image: np.ndarray, grid: GridSpec, seed: int) -> None:
    """Flat little-endian float64 row-major image plus a ``.txt`` header."""
    path = Path(path)
    image = np.ascontiguousarray(image, dtype="<f8")
    path.write_bytes(image.tobytes())
    path.with_suffix(path.suffix + ".txt").write_text(
        f"dims {image.shape[0]} {image.shape[1]}\n"
        f"domain {-grid.half_width} {grid.half_width}\n"
        f"seed {seed}\n"
    )


def load_image(path) -> np.ndarray:
    path = Path(path)
    header = path.with_suffix(path.suffix + ".txt").read_text().split("\n")
    n, m = (int(v) for v in header[0].split()[1:3])
    return np.frombuffer(path.read_bytes(), dtype="<f8").reshape(n, m).copy()


# Plasticity metrics

@dataclass(frozen=True)
class PlasticityReport:
    stable_rank: int
    dormant_ratio: float
    feature_norm: float
    tau: float = DEFAULT_TAU
    eps: float = DEFAULT_DORMANT_EPS


def feature_covariance(F) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    centered = F - F.mean(axis=0, keepdims=True)
    return centered.T @ centered / F.shape[0]


def stable_rank(F, tau: float = DEFAULT_TAU) -> int:
    """Number of eigenvalues of the feature covariance above ``tau``."""
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    if F.shape[0] < 1 or F.shape[1] < 1:
        raise ValueError("feature matrix must be at least 1x1")
    eig = np.linalg.eigvalsh(feature_covariance(F))
    return int(np.count_nonzero(eig > tau))


def dormant_ratio(activations, eps: float = DEFAULT_DORMANT_EPS) -> float:
    """Fraction of neurons whose batch-mean |activation| is below ``eps``."""
    a = np.atleast_2d(np.asarray(activations, dtype=np.float64))
    score = np.abs(a).mean(axis=0)
    return float(np.count_nonzero(score < eps) / score.size)


def feature_norm(F) -> float:
    F = np.atleast_2d(np.asarray(F, dtype=np.float64))
    return float(np.linalg.norm(F, axis=1).mean())


def plasticity_report(features, activations, tau: float = DEFAULT_TAU,
                      eps: float = DEFAULT_DORMANT_EPS) -> PlasticityReport:
    return PlasticityReport(stable_rank(features, tau), dormant_ratio(activations, eps),
                            feature_norm(features), tau, eps)
