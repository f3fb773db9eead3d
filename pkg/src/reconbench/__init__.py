"""reconbench: diffusion-reconstruction attacks on deepfake detectors, desk scale."""

__version__ = "0.1.0"
