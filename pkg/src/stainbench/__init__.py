"""H&E -> IHC dataset construction, challenge scoring and loss references."""

__version__ = "0.1.0"
