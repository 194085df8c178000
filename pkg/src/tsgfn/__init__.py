"""Thompson-sampling exploration for GFlowNets trained with trajectory balance."""
__version__ = "0.1.0"
