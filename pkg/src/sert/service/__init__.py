"""HTTP service: FastAPI app plus pydantic request/response schemas."""

from .app import app

__all__ = ["app"]
