"""Dataset manifests, synthetic fixtures, experiment runner, reports and CLI."""
