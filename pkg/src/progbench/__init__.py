"""Build, optimize and benchmark modular language programs on mock or HTTP LM backends."""

from .core import Example, Field, Prediction, Signature, Trace, parse_completion, render_prompt
from .lm import LM, CostLedger, FunctionalLM, PriceTable, ScriptedLM, compute_cost
from .programs import PROGRAMS, Program, ProgramOutput, build_program
from .retrieval import build_index, search

__version__ = "0.1.0"

__all__ = [
    "Example", "Field", "Prediction", "Signature", "Trace", "parse_completion", "render_prompt",
    "LM", "CostLedger", "FunctionalLM", "PriceTable", "ScriptedLM", "compute_cost",
    "PROGRAMS", "Program", "ProgramOutput", "build_program", "build_index", "search",
]
