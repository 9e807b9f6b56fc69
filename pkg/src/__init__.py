"""Hybrid malware classifier: featurizers, fusion networks and their training harness"""
