"""Finite-element natural convection of hybrid nanofluids in cavities."""
