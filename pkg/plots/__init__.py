"""Figure scripts that render run diagnostics into SVG files."""
