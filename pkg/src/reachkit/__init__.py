"""Sampling-based reachability analysis: randUP, robUP!, Lipschitz tubes, robust SCP."""
