# Image-quality metrics and agreement statistics
