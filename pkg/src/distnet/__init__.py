"""Grid-based spatio-temporal air pollution forecasting.

Subpackages are organized around the pipeline stages: ``tensor`` (autodiff
core), ``layers`` (parameterized building blocks + Adam), ``grid``
(station-to-grid inference), ``features`` (ingestion and windowing),
``models`` (DIST-Net and baselines), ``training``, ``synth`` (test-data
generator), ``evaluation`` and ``cli``.
"""

from .tensor import Tensor, backward, grad_check

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "grad_check", "__version__"]
