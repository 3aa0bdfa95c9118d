# Degenerate beam laboratory package
