"""Simulated cryptographic substrate: group, ElGamal, bulletin board, mixing and PETs."""
