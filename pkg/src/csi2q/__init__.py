"""WiFi CSI device fingerprinting.

Raw CSI is cleaned (phase unwrapping, jitter repair, cyclic-shift division),
turned into a 320-sample preamble-equivalent waveform, and classified by a
dilated causal convolution network trained with an auxiliary IQ-domain
alignment loss.  OpenMax calibration adds an "unknown device" output.
"""

from .errors import (CalibrationError, ContainerFormatError, Csi2qError, DegenerateFitError,
                     InvalidInputError, NearZeroDenominatorError)

__version__ = "0.1.0"

__all__ = [
    "CalibrationError", "ContainerFormatError", "Csi2qError", "DegenerateFitError",
    "InvalidInputError", "NearZeroDenominatorError", "__version__",
]
