"""Desk-scale 3D-aware GAN: tri-plane rendering, learnable camera, adversarial depth supervision."""
