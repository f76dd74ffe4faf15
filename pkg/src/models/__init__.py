"""
Domain models package: channel model, Bayesian DP, index strategies and multi-user competition.
"""
