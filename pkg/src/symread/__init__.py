"""Toolkit for modeling memory reads at symbolic addresses.

Subpackages:
  expr       bitvector expression AST, evaluation, s-expression syntax
  bounds     address range approximation (AST analysis, solver search,
             constant window)
  memmodel   read encodings: nested ITE, BST, enhanced linearization
  smtlib     QF_BV script emission and external solver processes
  microexec  miniature concolic executor over a toy register VM
  cli        command-line workflows (model / bench / run / covdiff)
"""

__version__ = "0.1.0"
