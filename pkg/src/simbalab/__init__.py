"""SimBa architecture lab: autodiff, networks, observation normalization,
simplicity-bias analysis and off-policy RL at desk scale."""

__version__ = "0.1.0"
