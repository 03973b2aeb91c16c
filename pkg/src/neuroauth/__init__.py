"""EEG-based user authentication pipeline.

Raw 32-channel recordings are bandpass filtered, cut into overlapping
windows, summarised by six statistics per channel, reduced per user with
extra-trees importances and classified genuine-vs-impostor.
"""

__version__ = "0.1.0"
