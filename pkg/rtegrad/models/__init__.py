"""Configuration schemas and shipped experiment presets."""
