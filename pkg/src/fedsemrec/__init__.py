"""Federated cross-domain recommendation engine.

Two-stage training over non-overlapping domains: server-side semantic
clustering of uploaded item text representations, client-side fine-grained
adaptation, then local fine-tuning with semantic graphs and bidirectional
contrastive alignment.  Includes full-ranking evaluation and a
similarity-based privacy audit.
"""

__version__ = "0.1.0"
