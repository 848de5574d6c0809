"""Co-simulation engine for buildings, distribution grids, communications and control."""
