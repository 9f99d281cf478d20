from hipscreen.nnet.checkpoint import Checkpoint, load, save
from hipscreen.nnet.train import (TrainConfig, TrainResult, predict_mask, predict_masks,
                                  train, write_log)
from hipscreen.nnet.unet import UNetConfig, init_params, unet_backward, unet_forward

__all__ = [
    "Checkpoint", "TrainConfig", "TrainResult", "UNetConfig", "init_params", "load",
    "predict_mask", "predict_masks", "save", "train", "unet_backward", "unet_forward",
    "write_log",
]
