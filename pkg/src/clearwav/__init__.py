"""Noise-robust self-supervised speech pretraining at desk scale.

Two waveform streams (clean and a noise-mixed twin) share a convolutional
feature encoder; a masked transformer predicts gumbel-softmax-quantized
clean targets under a contrastive objective with diversity, feature-norm,
and clean/noisy consistency terms.  Fine-tuning swaps the quantizer for a
character head trained with CTC.

Execution is pinned to a single BLAS thread: the model's matrices are
small enough that thread fan-out only costs time, and determinism of
training traces is part of the package contract.
"""

import os as _os
import sys as _sys

if "numpy" not in _sys.modules:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, "1")
else:  # numpy already loaded; fall back to runtime limiting
    try:
        import threadpoolctl as _threadpoolctl

        _threadpoolctl.threadpool_limits(1)
    except ImportError:
        pass

__version__ = "0.1.0"
