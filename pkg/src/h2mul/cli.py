"""Console entry point; pins BLAS to one thread before numpy loads.

Timings in the benchmark are meant to reflect a single core, so the
thread pools are limited before any numerical module is imported.  Keep
this module free of package imports at the top level.
"""

import os
import sys


def main() -> int:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    from .bench import main as bench_main
    return bench_main(sys.argv[1:])


if __name__ == "__main__":
    raise SystemExit(main())
