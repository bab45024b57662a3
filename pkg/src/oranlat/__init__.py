"""KPM latency forecasting for an O-RAN style near-real-time loop.

Subpackages: ``kpm`` (record schema), ``ransim`` (synthetic RAN),
``bus`` (persistent pub/sub), ``dataset`` (scaling and windows),
``forecaster`` (bidirectional LSTM), ``xapp`` (online engine), ``cli``.
"""

__version__ = "0.1.0"
