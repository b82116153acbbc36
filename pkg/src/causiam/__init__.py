"""Siamese continual test-time adaptation for single-image defocus deblurring."""
