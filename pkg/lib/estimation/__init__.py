# Unseen-domain mapping label estimation
