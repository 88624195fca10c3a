"""Service modules for squarefield."""
