import hashlib

import numpy as np


def operator_digest(phi: np.ndarray, phi_dual: np.ndarray, block_side: int) -> bytes:
    """MD5 digest over the shape and little-endian bytes of a sensing pair."""
    h = hashlib.md5()
    h.update(f"{phi.shape[0]}x{phi.shape[1]}:{block_side}".encode())
    h.update(np.ascontiguousarray(phi, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(phi_dual, dtype="<f8").tobytes())
    return h.digest()


def operator_id(phi: np.ndarray, phi_dual: np.ndarray, block_side: int) -> str:
    return operator_digest(phi, phi_dual, block_side).hex()


def generate_cache_key(*parts) -> str:
    """Cache key for the per-rank operator cache of the design store"""
    params = "_".join(str(p) for p in parts)
    return hashlib.md5(params.encode()).hexdigest()
