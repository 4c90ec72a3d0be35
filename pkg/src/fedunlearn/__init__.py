"""Deterministic federated-learning simulator with client-level unlearning.

Train a global model with federated averaging while the server retains
client updates at a regular round interval; afterwards reconstruct a model
that behaves as if a chosen client never participated, either by calibrating
the retained updates with short refresher training (eraser), by replaying
them verbatim (accum), or by retraining from scratch (retrain). Includes an
evaluation suite: accuracy/loss, prediction difference, last-layer angle
deviation, and membership-inference attacks.
"""

from . import data, evaluation, federation, nn, retention, unlearning

__version__ = "0.1.0"

__all__ = ["data", "evaluation", "federation", "nn", "retention", "unlearning", "__version__"]
