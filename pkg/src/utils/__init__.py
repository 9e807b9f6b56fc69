"""Shared helpers and the exception hierarchy"""
