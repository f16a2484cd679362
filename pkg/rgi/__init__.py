"""rgi package: room geometry inference from multichannel RIRs."""
__version__ = "1.0.0"
