"""Test suite for the video pretraining pipeline."""
