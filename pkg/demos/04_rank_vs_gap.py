"""
Off-diagonal rank versus spectral gap
=====================================

Smaller gaps make the projector harder to compress, but the ranks grow
only slowly.  The truncation tolerance sets the accuracy floor.
"""

from specproj import SpectrumSpec, diagnostics, hqdwh, synth_banded

n = 2048
print(" gap      eps     rank  memory (MB)  iterations")
for gap in (1e-1, 1e-3, 1e-6, 1e-10):
    A = synth_banded(SpectrumSpec.uniform(n, gap), 1)
    for eps in (1e-6, 1e-10):
        result = hqdwh(A, eps=eps)
        d = diagnostics(result.P)
        print(f"{gap:7.0e}  {eps:5.0e}  {d['max_offdiag_rank']:4d}  {d['memory_bytes'] / 2**20:10.2f}  {result.iterations:6d}")
