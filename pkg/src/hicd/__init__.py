"""Interaction middleware: an event heap, a service bus, task-model state
machines, user profiles, and terminal-adaptive interaction containers,
wired into a single-host daemon with a flight-operations demo app."""

__version__ = "0.1.0"
