"""Power spectrum of a tracked parameter and the effect of the averaging kernel.

A 1/f trace with a white floor is smoothed by the same Gaussian kernel that
the averaging stage applies. The Welch spectrum is then fitted with the
model ``(A / f**alpha + C) * |H(f)|**2``, where H is the kernel's transfer
function, so the fitted exponent is not biased by the smoothing roll-off.
"""
import numpy as np

from qfluct.averaging import gaussian_kernel
from qfluct.spectral import fit_psd_model, gaussian_transfer, shaped_noise, welch_psd

dt = 0.0046
n = 2**20
trace = shaped_noise(n, 1.0, dt, amplitude=1e4, seed=1) + np.random.default_rng(2).normal(0, 300, n)

k = gaussian_kernel(2.0)
smoothed = np.convolve(np.pad(trace, k.size // 2, mode="reflect"), k / k.sum(), mode="valid")

est = welch_psd(smoothed, dt)
print(f"{est.n_segments} segments of {est.segment_length}, Parseval ratio {est.parseval_ratio:.3f}")

with_kernel = fit_psd_model(est, 2.0)
without = fit_psd_model(est, 0.0)
print(f"fit with transfer function:    alpha={with_kernel.alpha:.3f}  C={with_kernel.C:.3g}")
print(f"fit ignoring the kernel:       alpha={without.alpha:.3f}  C={without.C:.3g}")
print(f"|H|^2 at Nyquist/4: {gaussian_transfer([0.125 / dt], dt, 2.0)[0]:.2e}")
