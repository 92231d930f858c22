"""Package for `services/reasoning/app/training`."""
