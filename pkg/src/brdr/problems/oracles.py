"""Reference solvers for the benchmarks without a closed-form solution.

* Burgers (u0 = -sin(pi x), u(+-1) = 0): Cole-Hopf representation evaluated
  by trapezoidal quadrature in the scaled Gaussian variable, with analytic
  x- and t-derivatives.  Cross-checked by a sixth-order finite-difference
  solver on the periodic extension.
* Allen-Cahn (u_t = D u_xx + 5(u - u^3), periodic on [-1, 1)): Fourier
  spectral solver with exponential time differencing (ETDRK4).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import OracleError

BURGERS_NU = 0.01 / np.pi
ALLENCAHN_D = 1e-4


# ---------------------------------------------------------------------------
# Burgers: Cole-Hopf quadrature
# ---------------------------------------------------------------------------


def burgers_cole_hopf(x, t, nu: float = BURGERS_NU, nodes: int = 2801, zmax: float = 14.0,
                      derivs: bool = False, chunk: int = 512):
    """Burgers solution at points (x, t); optionally also u_x, u_t, u_xx.

    With phi = int g(x - eta) K_t(eta) d eta and g = exp(-cos(pi y) / (2 pi nu)),
    u = -2 nu phi_x / phi.  Substituting eta = sqrt(4 nu t) z turns the heat
    kernel into exp(-z^2); the log-weights are shifted by their maximum.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
    if (t < 0).any():
        raise OracleError("Burgers oracle: negative time")
    c = 1.0 / (2.0 * np.pi * nu)
    pi = np.pi
    z = np.linspace(-zmax, zmax, nodes)
    wq = np.full(nodes, z[1] - z[0])
    wq[0] = wq[-1] = 0.5 * wq[0]
    out = np.empty((4, x.size))
    for lo in range(0, x.size, chunk):
        xs, ts = x[lo:lo + chunk], t[lo:lo + chunk]
        y = xs[:, None] - np.sqrt(4.0 * nu * ts)[:, None] * z[None, :]
        s, co = np.sin(pi * y), np.cos(pi * y)
        logw = -c * co - z[None, :] ** 2
        w = np.exp(logw - logw.max(axis=1, keepdims=True)) * wq
        h1 = c * pi * s           # h'
        h2 = c * pi * pi * co     # h''
        h3 = -c * pi ** 3 * s     # h'''
        p0 = w.sum(axis=1)
        r1 = (w * h1).sum(axis=1) / p0
        r2 = (w * (h2 + h1 * h1)).sum(axis=1) / p0
        r3 = (w * (h3 + 3.0 * h1 * h2 + h1 ** 3)).sum(axis=1) / p0
        sl = slice(lo, lo + xs.size)
        out[0, sl] = -2.0 * nu * r1
        out[1, sl] = -2.0 * nu * (r2 - r1 * r1)
        out[2, sl] = -2.0 * nu * nu * (r3 - r1 * r2)
        out[3, sl] = -2.0 * nu * (r3 - 3.0 * r1 * r2 + 2.0 * r1 ** 3)
    # at t = 0 the kernel is a delta: use the initial condition directly
    t0 = t == 0.0
    if t0.any():
        xs = x[t0]
        out[0, t0] = -np.sin(pi * xs)
        out[1, t0] = -pi * np.cos(pi * xs)
        out[3, t0] = pi * pi * np.sin(pi * xs)
        u, ux, uxx = out[0, t0], out[1, t0], out[3, t0]
        out[2, t0] = nu * uxx - u * ux
    if not np.isfinite(out).all():
        raise OracleError("Burgers oracle produced non-finite values")
    if derivs:
        return out[0], out[1], out[2], out[3]
    return out[0]


# ---------------------------------------------------------------------------
# Burgers: finite-difference cross-check
# ---------------------------------------------------------------------------

_D1 = (3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0)
_D2 = (-49.0 / 18.0, 3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0)


def burgers_fd(times, n: int = 4000, nu: float = BURGERS_NU, steps_per_unit: int = 10000):
    """Sixth-order central differences on the periodic grid x_j = -1 + 2j/n.

    The odd 2-periodic extension of the initial condition keeps u(+-1) = 0.
    The stencils are circulant, so they are applied through their Fourier
    symbols; the diffusion part is integrated exactly (integrating factor)
    and the convective part with classical RK4.  Returns (x, u) where u has
    one row per requested time.
    """
    h = 2.0 / n
    x = -1.0 + h * np.arange(n)
    theta = 2.0 * np.pi * np.fft.rfftfreq(n)
    sym1 = 1j * 2.0 * sum(c * np.sin((m + 1) * theta) for m, c in enumerate(_D1)) / h
    sym2 = (_D2[0] + 2.0 * sum(c * np.cos((m + 1) * theta) for m, c in enumerate(_D2[1:]))) / h ** 2
    times = np.asarray(times, dtype=float)
    if (np.diff(times) < 0).any() or times[0] < 0:
        raise OracleError("output times must be non-negative and increasing")
    dt = 1.0 / steps_per_unit
    e_half = np.exp(nu * sym2 * dt / 2.0)
    e_full = e_half * e_half

    def nonlin(vh):
        u = np.fft.irfft(vh, n)
        return -sym1 * np.fft.rfft(0.5 * u * u)

    vh = np.fft.rfft(-np.sin(np.pi * x))
    out = np.empty((times.size, n))
    t_now, k = 0.0, 0
    step = 0
    for i, tt in enumerate(times):
        target = int(round(tt * steps_per_unit))
        if abs(target * dt - tt) > 1e-12:
            raise OracleError("output times must be multiples of the FD time step")
        while step < target:
            k1 = nonlin(vh)
            k2 = nonlin(e_half * (vh + 0.5 * dt * k1))
            k3 = nonlin(e_half * vh + 0.5 * dt * k2)
            k4 = nonlin(e_full * vh + dt * e_half * k3)
            vh = e_full * vh + (dt / 6.0) * (e_full * k1 + 2.0 * e_half * (k2 + k3) + k4)
            step += 1
        out[i] = np.fft.irfft(vh, n)
    if not np.isfinite(out).all():
        raise OracleError("Burgers finite-difference run diverged")
    return x, out


# ---------------------------------------------------------------------------
# Allen-Cahn: Fourier spectral ETDRK4
# ---------------------------------------------------------------------------


@dataclass
class AllenCahnSolution:
    """Stored spectral solution; evaluates u and its x-derivatives anywhere."""

    dt: float
    n: int
    coeffs: np.ndarray  # (steps + 1, n//2 + 1) rfft coefficients
    d: float = ALLENCAHN_D

    @property
    def t_end(self) -> float:
        return self.dt * (self.coeffs.shape[0] - 1)

    def _k(self):
        return np.pi * np.arange(self.n // 2 + 1)

    def _rhs_hat(self, uh):
        u = np.fft.irfft(uh, self.n)
        return -self.d * self._k() ** 2 * uh + np.fft.rfft(5.0 * (u - u ** 3))

    def _series(self, uh, x, order):
        """Trigonometric interpolant (and derivatives) at arbitrary x."""
        n = self.n
        k = self._k()
        w = np.full(k.size, 2.0 / n)
        w[0] = 1.0 / n
        if n % 2 == 0:
            w[-1] = 1.0 / n
        phase = np.exp(1j * np.outer(x + 1.0, k))
        c = uh * w
        out = [np.real(phase @ c)]
        if order >= 1:
            out.append(np.real(phase @ (1j * k * c)))
        if order >= 2:
            out.append(np.real(phase @ (-(k ** 2) * c)))
        return out

    def coeffs_at(self, t: float):
        """Cubic Hermite interpolation in time using the spectral RHS."""
        if t < -1e-12 or t > self.t_end + 1e-12:
            raise OracleError(f"time {t} outside the solved interval")
        s = min(max(t / self.dt, 0.0), self.coeffs.shape[0] - 1.0)
        j = min(int(np.floor(s)), self.coeffs.shape[0] - 2)
        th = s - j
        if th < 1e-12:
            return self.coeffs[j]
        if th > 1 - 1e-12:
            return self.coeffs[j + 1]
        a, b = self.coeffs[j], self.coeffs[j + 1]
        fa, fb = self._rhs_hat(a), self._rhs_hat(b)
        h00 = 2 * th ** 3 - 3 * th ** 2 + 1
        h10 = th ** 3 - 2 * th ** 2 + th
        h01 = -2 * th ** 3 + 3 * th ** 2
        h11 = th ** 3 - th ** 2
        return h00 * a + h10 * self.dt * fa + h01 * b + h11 * self.dt * fb

    def evaluate(self, x, t, order: int = 0):
        """u (and u_x, u_xx if order >= 1, 2) at paired points (x, t)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), x.shape)
        out = np.empty((order + 1, x.size))
        for tt in np.unique(t):
            m = t == tt
            for r, v in enumerate(self._series(self.coeffs_at(float(tt)), x[m], order)):
                out[r, m] = v
        return out[0] if order == 0 else out

    def grid_values(self, stride: int = 1) -> tuple:
        """Solution on the collocation grid at every ``stride``-th step."""
        x = -1.0 + 2.0 * np.arange(self.n) / self.n
        u = np.fft.irfft(self.coeffs[::stride], self.n, axis=1)
        return x, self.dt * np.arange(0, self.coeffs.shape[0], stride), u


def allencahn_spectral(n: int = 512, dt: float = 1e-4, t_end: float = 1.0,
                       d: float = ALLENCAHN_D, contour: int = 64) -> AllenCahnSolution:
    """ETDRK4 with contour-integral coefficients on n Fourier modes."""
    steps = int(round(t_end / dt))
    if abs(steps * dt - t_end) > 1e-9:
        raise OracleError("t_end must be a multiple of dt")
    x = -1.0 + 2.0 * np.arange(n) / n
    k = np.pi * np.arange(n // 2 + 1)
    lin = -d * k ** 2
    e = np.exp(dt * lin)
    e2 = np.exp(dt * lin / 2.0)
    r = np.exp(1j * np.pi * (np.arange(1, contour + 1) - 0.5) / contour)
    lr = dt * lin[:, None] + r[None, :]
    q = dt * np.real(np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=1))
    f1 = dt * np.real(np.mean((-4.0 - lr + np.exp(lr) * (4.0 - 3.0 * lr + lr ** 2)) / lr ** 3, axis=1))
    f2 = dt * np.real(np.mean((2.0 + lr + np.exp(lr) * (-2.0 + lr)) / lr ** 3, axis=1))
    f3 = dt * np.real(np.mean((-4.0 - 3.0 * lr - lr ** 2 + np.exp(lr) * (4.0 - lr)) / lr ** 3, axis=1))

    def nl(vh):
        u = np.fft.irfft(vh, n)
        return np.fft.rfft(5.0 * (u - u ** 3))

    vh = np.fft.rfft(x ** 2 * np.cos(np.pi * x))
    coeffs = np.empty((steps + 1, k.size), dtype=complex)
    coeffs[0] = vh
    for s in range(steps):
        nv = nl(vh)
        a = e2 * vh + q * nv
        na = nl(a)
        b = e2 * vh + q * na
        nb = nl(b)
        c = e2 * a + q * (2.0 * nb - nv)
        nc = nl(c)
        vh = e * vh + f1 * nv + 2.0 * f2 * (na + nb) + f3 * nc
        coeffs[s + 1] = vh
    if not np.isfinite(coeffs).all():
        raise OracleError("Allen-Cahn spectral solver diverged")
    return AllenCahnSolution(dt, n, coeffs, d)


# ---------------------------------------------------------------------------
# cache files
# ---------------------------------------------------------------------------


def cache_dir() -> Path:
    root = os.environ.get("BRDR_CACHE_DIR")
    return Path(root) if root else Path.home() / ".cache" / "brdr"


def write_reference_csv(path, columns: dict) -> Path:
    """CSV with a header row and 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    cols = [np.asarray(columns[k], dtype=float).ravel() for k in names]
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([f"{v:.17g}" for v in row])
    os.replace(tmp, path)
    return path


def read_reference_csv(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(names))
    return {k: data[:, i] for i, k in enumerate(names)}


def reference_grid(nx: int = 101, nt: int = 101):
    """(x, t) grid on [-1, 1] x [0, 1], x varying fastest within each time."""
    xs = np.linspace(-1.0, 1.0, nx)
    ts = np.linspace(0.0, 1.0, nt)
    tt, xx = np.meshgrid(ts, xs, indexing="ij")
    return xx.ravel(), tt.ravel()


def generate_reference(name: str, path=None, nx: int = 101, nt: int = 101) -> Path:
    """Solve and write the reference field of ``burgers`` or ``allencahn``."""
    x, t = reference_grid(nx, nt)
    if name == "burgers":
        u = burgers_cole_hopf(x, t)
    elif name == "allencahn":
        u = allencahn_spectral().evaluate(x, t)
    else:
        raise OracleError(f"no oracle for {name!r}")
    if path is None:
        path = cache_dir() / f"{name}_{nx}x{nt}.csv"
    return write_reference_csv(path, {"x": x, "t": t, "u": u})


def load_reference(name: str, nx: int = 101, nt: int = 101) -> dict:
    """Cached reference field, generated on first use."""
    path = cache_dir() / f"{name}_{nx}x{nt}.csv"
    if not path.exists():
        generate_reference(name, path, nx, nt)
    return read_reference_csv(path)
