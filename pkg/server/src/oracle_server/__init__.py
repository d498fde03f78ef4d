from .app import make_server, serve
from .model import ModelError, ServedModel

__all__ = ["ModelError", "ServedModel", "make_server", "serve"]
