"""Local-global grid-LSTM segmentation engine with hand-written backpropagation.

Import the submodules you need (``lglstm.network``, ``lglstm.training``,
``lglstm.dataio``, ...).  This top-level module deliberately imports nothing
heavy so that the command-line entry point can cap BLAS thread counts before
numpy is loaded.
"""

__version__ = "0.1.0"
