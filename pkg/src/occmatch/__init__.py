"""Match transformation-initiative definitions to job postings and populate an occupation ontology."""

__version__ = "0.1.0"
