"""Diffusion-velocity particle method for the porous medium equation."""
