"""Driving-behaviour detection with graph-convolutional LSTMs over CAN-bus sensors."""

__version__ = "0.1.0"
