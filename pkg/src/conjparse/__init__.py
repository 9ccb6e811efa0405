"""conjparse: compositional semantic parsing into conjunctive-query graphs.

A question is encoded as a sequence of syntactic groups, every ordered pair of
candidate nodes (entity slots and variable tokens) is scored against every
relation, and the thresholded edge set is read off as a directed query graph.
Three model variants share one training loop: plain (ungrouped tokens),
syntax-aware (grouped input), and grounded (grouped input plus attention from
each candidate edge over the question's groups).
"""

from .dataset import Example, GrammarConfig, divergence, generate, mcd_split, random_split
from .model import Model, ModelConfig, load_model, save_model
from .query_ir import ConjunctiveQuery, Edge, NodeRef, canonical_form, iso_equal, parse_query, serialize
from .trainer import TrainConfig, train
from .evaluator import evaluate, predict_question, run_ablation

__version__ = "0.1.0"

__all__ = [
    "ConjunctiveQuery", "Edge", "NodeRef", "parse_query", "serialize",
    "canonical_form", "iso_equal",
    "Example", "GrammarConfig", "generate", "divergence", "mcd_split",
    "random_split",
    "Model", "ModelConfig", "TrainConfig", "train", "evaluate",
    "predict_question", "run_ablation", "load_model", "save_model",
]
