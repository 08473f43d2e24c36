"""Monte-Carlo twin of a fiber heralded single-photon source and its
photon-counting / homodyne characterization pipeline."""

__version__ = "0.1.0"
