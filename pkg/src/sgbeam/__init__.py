"""Stern-Gerlach splitting of low-energy ion beams."""
