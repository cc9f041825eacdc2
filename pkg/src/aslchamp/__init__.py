"""Sign-trajectory data model, synthetic sign generator, CNN+LSTM recognizer,
evaluation harness, and interactive lesson state machine.

Submodules are imported explicitly (``from aslchamp import gesture``) so that
the CLI can configure BLAS threading before numpy is loaded.
"""

__version__ = "0.1.0"
