"""agorasim: a typed multi-agent simulation engine for information-ecosystem
experiments — budgeted persona agents, per-run world models, hybrid retrieval,
claim graphs, and a record/replay LLM gateway."""

__version__ = "0.1.0"
