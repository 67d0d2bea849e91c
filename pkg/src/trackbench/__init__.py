"""Feature-track error measurement bench.

Trackers produce pixel tracks, geometric ground truth turns each track into
an error curve, and the statistics layer conditions those errors on time,
track age, motion type, and playback speed.
"""

__version__ = "0.1.0"
