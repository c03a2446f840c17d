"""Guaranteed bounds on transient rewards of large continuous-time Markov chains."""

__version__ = "0.1.0"
