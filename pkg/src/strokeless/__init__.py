"""Scene text removal via cascaded stroke detection and adversarial inpainting."""

__version__ = "0.1.0"
