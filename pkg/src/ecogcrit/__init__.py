"""Two-stage prediction of speech-critical electrodes from intracranial recordings."""

__version__ = "0.1.0"
