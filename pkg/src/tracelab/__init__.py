"""Tabular off-policy control with TBQ(sigma) eligibility traces."""
