"""Package for `services/reasoning/app/query`."""
