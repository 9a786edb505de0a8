"""Replication-aware Gaussian-process surrogates for stochastic simulators."""
