"""Variational Adaptive-Newton optimizers and benchmark tasks."""
