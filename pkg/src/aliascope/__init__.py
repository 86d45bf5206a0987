"""aliascope: sampling-theory auditing of CNN translation invariance.

Library modules:
  tensor      dense float64 arrays and shared primitives
  sampling    basis kernels, shiftability and Nyquist checks
  nn          minimal trainable CNN engine with a line-oriented spec grammar
  transforms  embedding, inpainting, 1-pixel translation/rescaling, crops
  audit       top-1 flip-rate protocols, depth profiles, feature traces
  biasstat    chi-squared bounding-box bias statistics
  data        synthetic datasets and PGM/PPM I/O
  theory      numeric verification of the invariance results
"""

__version__ = "0.1.0"
