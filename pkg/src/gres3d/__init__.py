"""Generalized 3D referring expression segmentation at desk scale."""
