# Volumes, preprocessing, phantoms and synthetic datasets
