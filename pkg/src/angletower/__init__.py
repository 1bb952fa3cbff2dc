"""Markov towers over exact external-angle models of dendrite Julia sets."""
