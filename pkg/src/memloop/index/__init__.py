from .hnsw import HnswIndex, IndexParams, RWLock

__all__ = ["HnswIndex", "IndexParams", "RWLock"]
