"""Membership encoding for feed-forward networks."""
