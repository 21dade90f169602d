"""Physics-informed spatiotemporal prediction on 2D scalar transport fields."""

__version__ = "0.1.0"
