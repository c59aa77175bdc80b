"""Domain aggregation network: simplex weighting for multi-source adaptation."""
