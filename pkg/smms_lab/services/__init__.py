"""Numerical services: grids, operators, spectra, flows, solvers and artifacts."""
