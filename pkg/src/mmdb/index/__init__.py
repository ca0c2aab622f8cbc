"""Secondary indexes embedded in segments, and the shared iterator contract."""
