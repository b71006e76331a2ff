from .errors import MnrankError
__all__ = ["MnrankError"]
