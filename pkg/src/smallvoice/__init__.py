"""Small-vocabulary speech command toolkit.

Subpackages:
  tensorcore   reverse-mode autodiff, layers, Adam
  dsp          WAV ingestion, mel spectrograms, NLF1 feature files
  models       the two CNN classifiers, checkpoints
  attribution  saliency, attention signal, acoustic units, t-SNE
  experiments  manifests, cross-validation, reports
  assistant    dialog state machine, contact store
  service      HTTP facade over assistant sessions
  cli          command-line entry points
"""

__version__ = "0.1.0"
