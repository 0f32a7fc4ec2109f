"""Desk-scale lab for non-parallel many-to-many voice conversion.

Trains a star-topology adversarial converter (encoder-decoder generator,
patch discriminator, domain classifier) on pre-extracted acoustic
feature files, optionally regularizing the encoder's latent space with
per-phoneme Gaussian priors estimated from frame-level phoneme
alignments. Everything runs in float64 on the CPU and is deterministic
given a seed.
"""

__version__ = "0.1.0"
