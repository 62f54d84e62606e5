"""uccatk: convert UD + lexical-semantic annotations to UCCA and evaluate."""

__version__ = "0.1.0"
