"""Manifest ingestion, synthetic corpus generation and encoded datasets"""
