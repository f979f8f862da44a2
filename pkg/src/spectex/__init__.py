"""spectex: exemplar-based texture synthesis with CNN Gram statistics and a
Fourier spectrum constraint.

Submodules are imported explicitly (``import spectex.pipeline``); nothing
heavy is pulled in at package import so the CLI can configure BLAS thread
caps before numpy loads.
"""

__version__ = "0.1.0"
