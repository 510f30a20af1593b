"""Noncontact fingerprint presentation-attack detection toolkit.

Pipeline: ingest captures into a manifest, blur-scan fingertips, extract
patches, train a DenseNet live/spoof classifier, evaluate with APCER/BPCER
per attack species, and serve the fingertip annotation tool.
"""

__version__ = "0.1.0"
