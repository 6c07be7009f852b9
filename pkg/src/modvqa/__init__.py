"""Modular blind video quality assessment engine.

A base quality predictor scores spatially downsampled key frames; spatial
and temporal rectifiers each emit an affine (scale, shift) correction of
that score from actual-resolution Laplacian subbands and actual-frame-rate
chunks.  Training randomly drops the rectifiers so the base predictor
stays a standalone model.
"""

__version__ = "0.1.0"
