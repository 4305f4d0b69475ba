"""CART regression forests with leaf-membership weights."""

from .forest import (
    LEAF_RULES,
    SCHEMES,
    Forest,
    ForestParams,
    LeafIndex,
    WeightVector,
    build_forest,
    check_scheme,
)

__all__ = [
    "LEAF_RULES",
    "SCHEMES",
    "Forest",
    "ForestParams",
    "LeafIndex",
    "WeightVector",
    "build_forest",
    "check_scheme",
]
