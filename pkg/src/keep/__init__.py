"""Knowledge-graph anchored co-occurrence embeddings for medical concepts."""
