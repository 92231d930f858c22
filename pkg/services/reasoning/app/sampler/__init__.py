"""Package for `services/reasoning/app/sampler`."""
