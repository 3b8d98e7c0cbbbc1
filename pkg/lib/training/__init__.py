# Losses, training loop, checkpoints and inference
