"""Package for `services/reasoning/app`.

Multi-hop knowledge-graph reasoning toolkit: graph store, query structures and
plans, the online training-data sampler, embedding models, the training
pipeline, evaluation and the `kgr` command line.

Notes:
- Keep package init side-effect free.
- Prefer explicit imports in consuming modules.
"""
