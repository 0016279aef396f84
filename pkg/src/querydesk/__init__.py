"""Natural-language analytics over a governed query API."""

__version__ = "0.1.0"
