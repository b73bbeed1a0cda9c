"""Core primitives shared by every solver."""
