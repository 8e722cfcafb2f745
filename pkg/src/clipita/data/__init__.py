"""Caption manifests, image fetching, caption filters and rating agreement."""
