"""Plain data types shared across core modules."""
