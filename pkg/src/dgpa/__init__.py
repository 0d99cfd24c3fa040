"""Distance-aware uncertainty toolkit.

Two pipelines on one tape-based autodiff core: a spectral-normalized
twin-encoder classifier that ranks pulse-pair similarity with
out-of-distribution-aware uncertainty, and a regression surrogate whose
random-Fourier-feature GP head reports how far a query sits from the
training data.  Seeded synthetic generators and an evaluation harness
reproduce both experimental setups at desk scale.
"""

__version__ = "0.1.0"

from .diffcore import (  # noqa: F401
    Parameter,
    RngStream,
    Tape,
    Tensor,
    adam_step,
    backward_pass,
    finite_diff_check,
    load_checkpoint,
    save_checkpoint,
    seeded_init,
)
from .errors import (  # noqa: F401
    CheckpointError,
    ConfigError,
    ContractViolation,
    DataFormatError,
    FactorizationError,
    StochasticForwardError,
)
