"""Blind ptychographic reconstruction with uncertain scan positions."""
