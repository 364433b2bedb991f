import os
import sys

# thread pools read these at import time, so they are set before numpy loads
_threads = os.environ.get("RISKBUDGET_THREADS")
if _threads:
    for _name in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_name] = _threads

from riskbudget.cli import main  # noqa: E402

sys.exit(main())
