# Command-line layer
