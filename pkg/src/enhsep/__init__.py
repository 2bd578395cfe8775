"""Speech enhancement and separation toolkit: STFT, oracle masks, beamformers, WPE, metrics and a simulation pipeline."""

__version__ = "0.1.0"
