"""Quantum-classical fixed-node Monte Carlo with classical-shadow overlaps."""
