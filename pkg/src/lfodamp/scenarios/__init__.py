"""Two-area scenarios: configuration, system construction and run orchestration."""
