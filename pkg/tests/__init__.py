"""Tests package for the CDF toolkit"""
