"""chainplanner: attack-action catalogs to diverse, validated attack chains."""

__version__ = "0.1.0"
