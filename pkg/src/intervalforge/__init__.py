"""Prediction intervals for linear regression under an average-width budget."""
