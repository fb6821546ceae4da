"""Zero-shot 4D style transfer with embedded Gaussians."""
