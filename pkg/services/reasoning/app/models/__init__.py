"""Package for `services/reasoning/app/models`."""
