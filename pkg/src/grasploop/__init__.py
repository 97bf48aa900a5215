"""Closed-loop grasp supervision toolkit.

Subpackages cover the full loop: telemetry classification (`watchdog`),
the bounded recovery policy (`policy`), the event-sourced trial lifecycle
(`events`, `agent`), the simulated tabletop (`simworld`), benchmarking
(`harness`), and the operator-facing HTTP service (`gateway`).
"""

__version__ = "0.1.0"
