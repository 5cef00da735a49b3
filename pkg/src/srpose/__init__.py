from .tensor import backend
