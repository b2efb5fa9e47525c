"""sievemal: rule-filtered malware detection pipelines and the attacks that probe them."""

__version__ = "0.1.0"
