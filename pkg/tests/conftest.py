import clearwav  # noqa: F401  (pins BLAS threads before numpy-heavy tests)
