"""Object-centric topological-map navigation with macro actions and a dynamic-action-space DQN."""

__version__ = "0.1.0"
