"""Size-aware architecture search, int8 quantization and integer C deployment for PPG blood-pressure CNNs."""
__version__ = "0.1.0"
