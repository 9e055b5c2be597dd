"""Conversational BI engine: dialogue analysis, knowledge retrieval, table
selection, SQL generation, data preparation, insight tooling, and metrics."""

__version__ = "0.1.0"
