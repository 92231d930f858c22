"""Package for `services/reasoning/app/evaluation`."""
