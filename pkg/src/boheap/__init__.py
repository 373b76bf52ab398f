"""boheap: symbolic shape analysis for heap-manipulating procedures.

Infers universally quantified loop invariants by Boolean-heap predicate
abstraction with a context-sensitive Cartesian post, propagates precondition
conjuncts ahead of the shape analysis, and checks the generated verification
conditions against a pluggable validity checker whose built-in backend is a
bounded finite-model enumerator.
"""

from .config import AnalysisConfig
from .engine import AnalysisReport, Engine
from .parser import ParseError, parse_formula, parse_procedure, print_procedure
from .prover import Prover, Query, QueryCache, Verdict, bounded_valid, export_smtlib
from .semantics import ConcreteState, Scope, Vocabulary

__version__ = "0.1.0"

__all__ = [
    "AnalysisConfig", "AnalysisReport", "Engine", "ParseError",
    "parse_formula", "parse_procedure", "print_procedure", "Prover", "Query",
    "QueryCache", "Verdict", "bounded_valid", "export_smtlib",
    "ConcreteState", "Scope", "Vocabulary", "__version__",
]
