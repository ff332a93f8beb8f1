import os
import sys

# BLAS picks its thread count when numpy loads, so pin it before any import
if len(sys.argv) > 1 and sys.argv[1] == "benchmark":
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = "1"

from app.main import main  # noqa: E402

sys.exit(main())
