"""Model server speaking the diffusion-inversion anomaly detection protocol.

`python -m modelhost` serves the pretrained latent-diffusion autoencoder and
UNet, ViT-S/8 patch features, and an instance segmenter; `--stub` swaps in
the analytic conformance bundle, which needs no models at all.
"""

__version__ = "0.1.0"

from .analytic import StubBundle
from .app import create_app
from .config import ServerConfig

__all__ = ["StubBundle", "create_app", "ServerConfig"]
