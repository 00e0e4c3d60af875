"""Artifact version recorded in every emitted manifest."""

ARTIFACT_VERSION = "0.1.0"
