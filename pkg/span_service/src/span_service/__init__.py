"""Extractive QA span service for clinical-note error localization."""
