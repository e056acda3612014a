"""AMR-enhanced dialogue response evaluation: SLM scorer, LLM judge, and correlation harness."""

__version__ = "0.1.0"
