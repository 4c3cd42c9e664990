"""Select the interpreter backend.

The compiled extension is used when importable; set
``SUPEROPT_PURE_PYTHON=1`` to force the pure-Python kernels.
"""
import os

if os.environ.get("SUPEROPT_PURE_PYTHON", "") not in ("", "0"):
    from ._kernels_py import run_program, suite_hamming, suite_outputs, suite_states

    BACKEND = "python"
else:
    try:
        from ._kernels import run_program, suite_hamming, suite_outputs, suite_states

        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import run_program, suite_hamming, suite_outputs, suite_states

        BACKEND = "python"

__all__ = ["BACKEND", "run_program", "suite_hamming", "suite_outputs", "suite_states"]
