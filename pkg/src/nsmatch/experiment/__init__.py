"""Experiment harness: configuration, multi-seed runs, bound reports and oracle suites."""
