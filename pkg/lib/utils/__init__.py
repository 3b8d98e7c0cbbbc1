# Utility modules