"""Guidebook-grounded country geolocation.

Pipeline: extract location-bearing sentences (clues) from a guidebook,
geoparse them into country pseudo-labels, embed images and clues as dense
vectors, then train an attention classifier that fuses image features with
a weighted summary of clue embeddings to predict a country.
"""

__version__ = "0.1.0"
