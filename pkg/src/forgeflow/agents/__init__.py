"""The four agent implementations: task hub plus data, model, and server spokes."""
