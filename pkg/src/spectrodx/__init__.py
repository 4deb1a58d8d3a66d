"""EEG spectrogram classification with generative augmentation and LIME explanations."""
from ._runtime import keep_heap_pages

keep_heap_pages()

__version__ = "0.1.0"
