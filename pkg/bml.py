#!/usr/bin/env python3
"""
Runner for the bandit medium access simulator.
Usage: python bml.py simulate --fixture ucb-order
"""
from src.cli import main

if __name__ == "__main__":
    main()
