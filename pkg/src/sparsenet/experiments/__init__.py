"""MNIST noise-robustness experiments and forward-pass operation accounting."""
