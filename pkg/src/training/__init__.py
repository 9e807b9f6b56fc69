"""Training loops, evaluation metrics and the fusion experiment"""
