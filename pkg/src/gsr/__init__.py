from gsr.kernels import BACKEND  # noqa: F401
