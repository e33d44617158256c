# src/utils/__init__.py
from .expressions import ExpressionError, compile_matrix, parse_entry
from .io import read_csv, write_csv, write_json
from .linalg import check_psd, psd_sqrt, symmetrize

__all__ = [
    "ExpressionError", "compile_matrix", "parse_entry", "read_csv", "write_csv", "write_json",
    "check_psd", "psd_sqrt", "symmetrize",
]
