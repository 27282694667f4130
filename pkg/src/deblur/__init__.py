"""SRCNN image deblurring with an MSE + L1 + MS-SSIM loss, built on numpy."""

__version__ = "0.1.0"
