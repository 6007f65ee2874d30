"""Reference implementations and data generators used by the test suite."""
