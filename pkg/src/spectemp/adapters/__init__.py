from .base import EmbeddingProvider, ModelInterface, ModelOutput, estimate_tokens
from .embedding import DEFAULT_DIM, HashEmbeddingProvider, hash_embed, hash_embed_block
from .oracle import (
    GoldSpec,
    NoiseConfig,
    NoisyOracle,
    OracleDraft,
    OracleTarget,
    oracle_draft_step,
    oracle_target_step,
)
from .remote import RemoteConfig, RemoteModel

__all__ = [
    "DEFAULT_DIM",
    "EmbeddingProvider",
    "GoldSpec",
    "HashEmbeddingProvider",
    "ModelInterface",
    "ModelOutput",
    "NoiseConfig",
    "NoisyOracle",
    "OracleDraft",
    "OracleTarget",
    "RemoteConfig",
    "RemoteModel",
    "estimate_tokens",
    "hash_embed",
    "hash_embed_block",
    "oracle_draft_step",
    "oracle_target_step",
]
