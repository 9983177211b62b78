"""Steganalysis CNN with residual truncation and sublinear pooling, built on a small numpy autodiff core."""

__version__ = "0.1.0"
