# Network modules: Haar transforms, label conditioning, generators and discriminators
