import os
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import numpy as np
import psutil
from dotenv import load_dotenv

# Load environment variables (MSCAT_THREADS may live in .env)
load_dotenv()

T = TypeVar("T")
R = TypeVar("R")

LOG_FORMAT = "[%(levelname)s] %(message)s"


def setup_logging(verbose: bool = False):
    """Configure root logging once for the CLI and scripts."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO, format=LOG_FORMAT, force=True)


def resolve_threads(requested: Optional[int] = None) -> int:
    """
    Pick the worker count for thread pools.

    Args:
        requested: Explicit ``--threads`` value (wins when given)

    Returns:
        int: ``requested``, else ``MSCAT_THREADS``, else the logical core count
    """
    if requested is not None:
        if requested < 1:
            raise ValueError(f"threads must be >= 1, got {requested}")
        return int(requested)
    env_value = os.getenv("MSCAT_THREADS")
    if env_value:
        try:
            value = int(env_value)
        except ValueError:
            raise ValueError(f"MSCAT_THREADS must be an integer, got {env_value!r}")
        if value < 1:
            raise ValueError(f"MSCAT_THREADS must be >= 1, got {value}")
        return value
    return psutil.cpu_count(logical=True) or 1


def set_deterministic(enabled: bool, threads: int = 1):
    """Switch torch into ordered single-thread reductions (or restore the thread count)."""
    import torch

    if enabled:
        torch.set_num_threads(1)
        torch.use_deterministic_algorithms(True)
    else:
        torch.set_num_threads(max(1, threads))
        torch.use_deterministic_algorithms(False)


def ordered_map(func: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Map ``func`` over ``items`` on a thread pool; results come back in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(func, items))


def row_blocks(n_rows: int, block_size: int) -> List[slice]:
    """Split ``range(n_rows)`` into contiguous slices of at most ``block_size`` rows."""
    block_size = max(1, int(block_size))
    return [slice(start, min(start + block_size, n_rows)) for start in range(0, n_rows, block_size)]


def unit_vectors(vectors: np.ndarray) -> np.ndarray:
    """Normalize rows; zero rows stay zero."""
    norms = np.linalg.norm(vectors, axis=-1, keepdims=True)
    safe = np.where(norms > 0.0, norms, 1.0)
    return np.where(norms > 0.0, vectors / safe, 0.0)
