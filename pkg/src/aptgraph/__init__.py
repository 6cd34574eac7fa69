"""Multi-stage intrusion campaign detection for industrial IoT networks."""

__version__ = "0.1.0"
