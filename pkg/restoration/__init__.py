"""
Numpy-only restoration network: layer kernels, reverse-mode autograd,
the multi-branch subspace-attention model, training and gradient checks.
"""
