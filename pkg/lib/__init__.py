# Multi-domain restoration library