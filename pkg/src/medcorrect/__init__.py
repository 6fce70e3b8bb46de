"""Medical error detection and correction for clinical notes.

Combines a fine-tuned error-span predictor with LLM prompting strategies
(in-context learning, chain-of-thought reasons, hints, and MCQ-style
correction), plus the evaluation and sensitivity-analysis harness needed
to compare strategies.
"""

__version__ = "0.1.0"
