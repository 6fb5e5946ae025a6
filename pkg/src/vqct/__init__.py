"""Vector-quantized image autoencoders with codebooks generated from word priors."""

__version__ = "0.1.0"
