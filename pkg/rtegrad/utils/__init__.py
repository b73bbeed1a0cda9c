"""Experiment orchestration and result I/O."""
