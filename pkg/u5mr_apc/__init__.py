"""Small-area under-five mortality from survey birth histories with a
spatio-temporal age-period-cohort model."""

__version__ = "0.1.0"
