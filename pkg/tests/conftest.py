"""Pin BLAS/OpenMP pools to one thread (before numpy ever loads) so training
histories are reproducible regardless of the host's core count."""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
