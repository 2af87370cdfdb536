"""Modelling utilities: tape, embeddings, feature mask, adapter, base models, training and evaluation."""
