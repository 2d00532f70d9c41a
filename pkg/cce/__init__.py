# -*- coding: utf-8 -*-

"""Top-level package for cce."""

__author__ = """The cce developers"""
__version__ = '0.1.0'
