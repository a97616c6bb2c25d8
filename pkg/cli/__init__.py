"""Command-line commands for the current-harnessing MPC toolkit."""
