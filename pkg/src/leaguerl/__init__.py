"""Competitive self-play league training: actors, learners, inference servers,
a model pool and a league manager talking over a framed binary RPC protocol."""

__version__ = "0.1.0"
