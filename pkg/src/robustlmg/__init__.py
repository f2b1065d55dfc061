"""Distributionally robust linear Markov games: exact oracles and sample-based learners."""

__version__ = "0.1.0"
