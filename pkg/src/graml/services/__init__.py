"""Service modules for checkpoint and record persistence."""
