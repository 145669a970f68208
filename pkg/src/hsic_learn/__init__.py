"""Learning with the HSIC loss: kernels, estimator, models, training and experiments."""
