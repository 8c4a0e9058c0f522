"""Time-varying vaccine efficacy from recurrent-event trials.

Fits Andersen-Gill / first-event Cox models with a time-varying vaccine
effect, summarises the efficacy curve by its area, converts it into cases
averted, and simulates trials to check the whole pipeline.
"""

__version__ = "0.1.0"
