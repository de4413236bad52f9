from .checkpoint import ModelCheckpoint, load_checkpoint, save_checkpoint
from .network import EncoderDecoder, NetworkConfig

__all__ = ["EncoderDecoder", "NetworkConfig", "ModelCheckpoint", "load_checkpoint", "save_checkpoint"]
