"""Stochastic reaction network simulation and approximate filtering."""
