"""vggw_exporter: convert pretrained VGG-19 convolution weights into the
VGGW container and emit reference activations for cross-validation."""

__version__ = "0.1.0"
