"""Test suite for the saliency-map attack toolkit."""
