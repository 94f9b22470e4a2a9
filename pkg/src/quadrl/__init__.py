"""End-to-end learned quadcopter controller: simulator, TD3 trainer, PID baseline, export."""

__version__ = "0.1.0"
