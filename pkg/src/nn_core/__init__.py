"""Minimal numpy neural-network engine: layers, loss, gradients, Adam, checkpoints"""
