"""Experiment drivers, MLP training, baselines and the command-line interface."""
