"""Model assembly: configuration, parameter bundle, checkpoint round-trip.

A checkpoint is self-contained: it stores every learnable tensor plus the
vocabularies, lexicons, and resolved configuration (with a hash), so that
evaluation and prediction can refuse silently-drifted inputs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderParams, init_encoder_params
from .errors import ConfigError
from .graph_decoder import (MODE_GROUNDED, MODES, DecoderParams,
                            init_decoder_params)
from .vocab import Vocabulary


@dataclass
class ModelConfig:
    mode: str = MODE_GROUNDED
    d: int = 128
    n_vars: int = 4
    threshold: float = 0.5
    kind_head: bool = True
    contextual_values: bool = False
    allow_self_loops: bool = False
    max_positions: int = 64
    precision: int = 32  # 32 or 64
    unk_words: bool = False  # map unseen question tokens to [UNK] (noisy corpora)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.precision not in (32, 64):
            raise ConfigError(f"precision must be 32 or 64, got {self.precision}")
        if not (1 <= self.n_vars <= 8):
            raise ConfigError(f"n_vars must be in 1..8, got {self.n_vars}")

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32


@dataclass
class Model:
    config: ModelConfig
    word_vocab: Vocabulary
    relations: Vocabulary
    encoder: EncoderParams
    decoder: DecoderParams
    pos_lexicon: dict[str, str] = field(default_factory=dict)
    entity_lexicon: dict[str, str] = field(default_factory=dict)
    seed: int = 0

    def params(self) -> dict[str, Tensor]:
        out = self.encoder.named()
        out.update(self.decoder.named())
        return out

    def param_count(self) -> int:
        return sum(int(np.prod(p.data.shape)) for p in self.params().values())

    def config_hash(self) -> str:
        return ad.config_hash({
            "config": asdict(self.config),
            "words": list(self.word_vocab.tokens),
            "relations": list(self.relations.tokens),
            "pos_lexicon": sorted(self.pos_lexicon.items()),
            "entity_lexicon": sorted(self.entity_lexicon.items()),
        })


def init_model(config: ModelConfig, word_vocab: Vocabulary, relations: Vocabulary,
               seed: int, pos_lexicon=None, entity_lexicon=None) -> Model:
    ss = np.random.SeedSequence(seed)
    enc_seed, dec_seed = ss.spawn(2)
    enc = init_encoder_params(np.random.default_rng(enc_seed), len(word_vocab),
                              config.d, dtype=config.dtype)
    dec = init_decoder_params(np.random.default_rng(dec_seed), config.mode,
                              len(relations), config.d,
                              kind_head=config.kind_head, dtype=config.dtype)
    return Model(config=config, word_vocab=word_vocab, relations=relations,
                 encoder=enc, decoder=dec, pos_lexicon=dict(pos_lexicon or {}),
                 entity_lexicon=dict(entity_lexicon or {}), seed=seed)


def save_model(path: str, model: Model, extra_manifest: dict | None = None,
               extra_arrays: dict[str, np.ndarray] | None = None) -> None:
    arrays = {name: p.data for name, p in model.params().items()}
    if extra_arrays:
        arrays.update(extra_arrays)
    manifest = {
        "format": "conjparse-checkpoint-v1",
        "config": asdict(model.config),
        "words": list(model.word_vocab.tokens),
        "word_unk": model.word_vocab.unk,
        "relations": list(model.relations.tokens),
        "pos_lexicon": sorted(model.pos_lexicon.items()),
        "entity_lexicon": sorted(model.entity_lexicon.items()),
        "config_hash": model.config_hash(),
        "seed": model.seed,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    ad.save_archive(path, arrays, manifest,
                    keep_dtype=model.config.precision == 64)


def load_model(path: str) -> tuple[Model, dict, dict[str, np.ndarray]]:
    """Returns (model, manifest, extra_arrays). Extra arrays are any records
    beyond the model parameters (optimizer state on resumable checkpoints)."""
    arrays, manifest = ad.load_archive(path)
    config = ModelConfig(**manifest["config"])
    word_vocab = Vocabulary(manifest["words"], unk=manifest.get("word_unk", False))
    relations = Vocabulary(manifest["relations"])
    model = init_model(config, word_vocab, relations, manifest.get("seed", 0),
                       pos_lexicon=dict(manifest.get("pos_lexicon", [])),
                       entity_lexicon=dict(manifest.get("entity_lexicon", [])))
    params = model.params()
    dtype = config.dtype
    extra = {}
    for name, arr in arrays.items():
        if name in params:
            if tuple(arr.shape) != tuple(params[name].data.shape):
                raise ConfigError(f"checkpoint tensor {name} has shape {arr.shape}, "
                                  f"expected {params[name].data.shape}")
            params[name].data = np.ascontiguousarray(arr, dtype=dtype)
        else:
            extra[name] = arr
    return model, manifest, extra
