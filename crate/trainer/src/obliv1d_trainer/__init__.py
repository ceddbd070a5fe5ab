"""Bob's in-the-clear pipeline: features, training, int8 export and golden
vectors for the obliv1d engine."""
