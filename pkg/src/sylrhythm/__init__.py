"""Speech rhythm analysis: auditory envelopes, modulation spectra, syllable
rates, and onset-to-envelope models (TRF and bidirectional LSTM)."""

__version__ = "0.1.0"
