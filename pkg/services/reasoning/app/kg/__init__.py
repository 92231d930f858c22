"""Package for `services/reasoning/app/kg`."""
