"""Filepath, API-sequence and static PE featurizers"""
