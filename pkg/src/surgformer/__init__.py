"""Encoder-decoder Transformer for surgical gesture recognition, gesture
prediction and end-effector trajectory prediction from robot kinematics."""

__version__ = "0.1.0"
