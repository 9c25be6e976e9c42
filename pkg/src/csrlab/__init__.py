"""Two-stage code-switching restore pretraining for low-resource translation.

Word-embedding alignment induces a bilingual lexicon, which drives a
code-switching corruption; a small encoder-decoder first learns to restore the
original sentences and is then finetuned on parallel data.
"""
from .errors import CsrError

__version__ = "0.1.0"
__all__ = ["CsrError", "__version__"]
