"""Spectral projectors of symmetric banded matrices via QDWH in HODLR format."""

from .banded import (
    BandedSymmetric,
    GivensRotation,
    GivensSequence,
    SingularMatrixError,
    SpectrumSpec,
    band_matvec,
    estimate_2norm,
    estimate_l0,
    make_givens,
    read_sbm,
    synth_banded,
    write_sbm,
)
from .fastqr import accumulate_dense, assemble_q, q1q2t, reduce_banded, reduce_stacked, reduce_tridiag, rotation_count
from .hodlr import (
    HodlrMatrix,
    LowRankBlock,
    NotPositiveDefiniteError,
    PartitionTree,
    TreeMismatchError,
    diagnostics,
    hodlr_add,
    hodlr_cholesky,
    hodlr_matvec,
    hodlr_multiply,
    solve_triangular_right,
    truncate,
)
from .qdwh import ProjectorResult, QdwhState, dense_qdwh, error_metrics, hqdwh, l_update, oracle_projector, qdwh_params
from .theory import ZolotarevSpec, elliptic_K, jacobi_sn, sv_decay_bound, verify_decay, zolotarev

__version__ = "0.1.0"
