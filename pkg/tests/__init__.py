"""Tests for battery_privacy"""
