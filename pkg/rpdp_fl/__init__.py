"""
rpdp_fl simulates cross-silo federated learning where every record carries
its own differential-privacy budget, and keeps the per-record accounting.
"""
__version__ = "1.0.0"
