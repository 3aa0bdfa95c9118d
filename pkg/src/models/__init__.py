# Data, configuration and report models
