"""
Why the projector is compressible
=================================

Off-diagonal blocks of the spectral projector have rapidly decaying
singular values.  The bound comes from the best rational approximation
of the sign function on ``[-R, -1] U [1, R]`` (a Zolotarev function).
"""

import numpy as np

from specproj import SpectrumSpec, oracle_projector, sv_decay_bound, synth_banded, zolotarev

# the Zolotarev error shrinks geometrically with the degree
R = 1e4
for m in range(1, 7):
    z = zolotarev(m, R)
    print(f"m = {m}: measured error {z.measured_error():.3e}, bound {z.E_upper:.3e}")

# singular values of one off-diagonal block against the bound
n, b, gap = 512, 1, 1e-2
A = synth_banded(SpectrumSpec.uniform(n, gap), b)
Pi, _ = oracle_projector(A.to_dense())
s = np.linalg.svd(Pi[: n // 2, n // 2 :], compute_uv=False)

print("\n k   sigma_k     bound")
for k in (2, 6, 10, 14, 18, 22):
    m = k // (2 * b)
    print(f"{k:2d}  {s[k]:.2e}  {sv_decay_bound(m, b, gap):.2e}")
