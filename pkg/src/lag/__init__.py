"""Logic-augmented retrieval QA: decompose, order, chain-retrieve, terminate, synthesize."""

from .config import Settings, load_settings
from .core import (
    ABLATION_ROWS,
    AblationFlags,
    AnswerTrace,
    ChainStep,
    CognitiveLoadReport,
    LogicalChain,
    Passage,
    Question,
    RetrievalHit,
    SubQuestion,
    TerminationEvent,
    TerminationReason,
    TerminatorConfig,
    validate_chain,
)
from .decompose import LoadConfig, cognitive_load, decompose, split_condition
from .evaluation import EvalReport, QAExample, contain_match, judge_match, load_dataset, run_eval
from .index import VectorIndex, cosine, ingest, load_corpus, retrieve
from .planner import extract_dependencies, reorder
from .providers import ChatCompletionProvider, HashEmbedder, HTTPEmbeddingProvider, ScriptedLLM
from .reasoner import run_chain
from .synthesize import answer

__version__ = "0.1.0"

__all__ = [
    "ABLATION_ROWS", "AblationFlags", "AnswerTrace", "ChainStep", "ChatCompletionProvider", "CognitiveLoadReport",
    "EvalReport", "HTTPEmbeddingProvider", "HashEmbedder", "LoadConfig", "LogicalChain", "Passage", "QAExample",
    "Question", "RetrievalHit", "ScriptedLLM", "Settings", "SubQuestion", "TerminationEvent", "TerminationReason",
    "TerminatorConfig", "VectorIndex", "answer", "cognitive_load", "contain_match", "cosine", "decompose",
    "extract_dependencies", "ingest", "judge_match", "load_corpus", "load_dataset", "load_settings", "reorder",
    "retrieve", "run_chain", "run_eval", "split_condition", "validate_chain",
]
