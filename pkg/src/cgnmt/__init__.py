"""Character-gated NMT toolkit: spelling-aware decoder embeddings over a
minimal autodiff core, with BPE preprocessing, beam-search decoding, and a
morphological-complexity analysis suite."""

__version__ = "0.1.0"
