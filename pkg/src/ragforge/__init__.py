"""ragforge: synthesize domain QA datasets and evaluate retrieval pipelines."""

from .datamodel import TOOL_VERSION as __version__  # noqa: F401
