"""
Bandit medium access simulator main package.
"""
