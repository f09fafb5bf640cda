"""Quick self-checks: network shapes, numeric kernels against slow references, gradients."""
from __future__ import annotations

import numpy as np

from .encoder import hann_window, power_spectral_density
from .model import PSDRegNet
from .nn.gradcheck import gradient_check
from .nn.layers import (
    Linear, ReLU, Sequential, adaptive_avg_pool2d, conv2d_forward, linear_forward, pool_regions,
)

EXPECTED_SHAPES = [(1, 35, 40), (16, 33, 38), (32, 31, 36), (32, 4, 4), (512,), (64,), (1,)]


def check_shapes() -> tuple[bool, str]:
    net = PSDRegNet()
    shapes = [s for _, s in net.shapes((1, 35, 40))]
    # keep the rows that change size: input, conv1, conv2, pool, flatten, fc1, fc2
    seen = [(1, 35, 40)]
    for s in shapes:
        if s != seen[-1]:
            seen.append(s)
    out = net.forward(np.zeros((2, 35, 40)), training=False)
    ok = seen == EXPECTED_SHAPES and out.shape == (2, 1)
    return ok, " -> ".join("x".join(map(str, s)) for s in seen)


def _dft_psd(x: np.ndarray, fs: float) -> np.ndarray:
    n = len(x)
    w = hann_window(n)
    k = np.arange(n // 2 + 1)[:, None]
    X = (w * x * np.exp(-2j * np.pi * k * np.arange(n) / n)).sum(axis=1)
    p = np.abs(X) ** 2 / (fs * np.sum(w ** 2))
    p[1:n // 2 + (n % 2)] *= 2
    return p


def check_kernels(seed: int = 0) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    fs = 1000.0
    x = rng.standard_normal(256)
    psd = power_spectral_density(x, fs)
    ref = _dft_psd(x, fs)
    psd_err = float(np.max(np.abs(psd - ref)) / np.max(np.abs(ref)))
    w = hann_window(len(x))
    # integrating the PSD over frequency recovers the window-normalised energy
    energy = np.sum((w * x) ** 2) / np.sum(w ** 2)
    parseval = abs(np.sum(psd) * fs / len(x) - energy) / energy

    xi = rng.standard_normal((2, 3, 7, 8))
    W = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out = conv2d_forward(xi, W, b, padding=1)
    xp = np.pad(xi, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref_c = np.zeros_like(out)
    for n in range(2):
        for o in range(4):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    ref_c[n, o, i, j] = np.sum(xp[n, :, i:i + 3, j:j + 3] * W[o]) + b[o]
    conv_err = float(np.max(np.abs(out - ref_c)))

    xa = rng.standard_normal((2, 3, 9, 11))
    pooled = adaptive_avg_pool2d(xa, (4, 4))
    ref_p = np.zeros_like(pooled)
    for i, (r0, r1) in enumerate(pool_regions(9, 4)):
        for j, (c0, c1) in enumerate(pool_regions(11, 4)):
            ref_p[:, :, i, j] = xa[:, :, r0:r1, c0:c1].mean(axis=(2, 3))
    pool_err = float(np.max(np.abs(pooled - ref_p)))

    Wl, bl, xl = rng.standard_normal((5, 7)), rng.standard_normal(5), rng.standard_normal((3, 7))
    ref_l = np.array([[sum(Wl[o, i] * xl[n, i] for i in range(7)) + bl[o] for o in range(5)]
                      for n in range(3)])
    lin_err = float(np.max(np.abs(linear_forward(xl, Wl, bl) - ref_l)))
    ok = (psd_err < 1e-9 and parseval < 1e-9 and conv_err < 1e-12 and pool_err < 1e-12
          and lin_err < 1e-12)
    return ok, (f"psd {psd_err:.1e} parseval {parseval:.1e} conv {conv_err:.1e} "
                f"pool {pool_err:.1e} linear {lin_err:.1e}")


def check_gradients(seed: int = 0, max_per_tensor: int = 24) -> tuple[bool, str]:
    rng = np.random.default_rng(seed)
    net = PSDRegNet(seed=seed)
    x = rng.random((4, 1, 35, 40))
    y = rng.standard_normal((4, 1))
    full = gradient_check(net, x, y, max_per_tensor=max_per_tensor, seed=seed)
    dense = Sequential([Linear(6, 5, rng=rng), ReLU(), Linear(5, 1, rng=rng)])
    lin = gradient_check(dense, rng.standard_normal((4, 6)), rng.standard_normal((4, 1)))
    ok = full.max_rel_error < 1e-4 and lin.max_rel_error < 1e-7
    return ok, f"network {full.max_rel_error:.1e} dense {lin.max_rel_error:.1e}"


CHECKS = {"shapes": check_shapes, "kernels": check_kernels, "gradients": check_gradients}


def run_selftest(echo=print) -> bool:
    passed = True
    for name, check in CHECKS.items():
        ok, detail = check()
        passed &= ok
        echo(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    return passed
