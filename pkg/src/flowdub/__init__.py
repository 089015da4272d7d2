"""flowdub: flow-matching dubbing toolkit on synthetic data.

Library layout:

- ``rng``          deterministic splitmix64-seeded xoshiro256** streams
- ``nn``           float64 MLP with handwritten gradients, FD oracle, Adam
- ``tensorio``     FDT1 binary tensor container
- ``flow``         OT conditional flow matching and Euler sampling
- ``guidance``     style affine and decoupled classifier-free guidance
- ``align``        InfoNCE both ways, monotonic alignment search, upsampling
- ``conditioning`` cross-modal transformer stack and stream fusion
- ``metrics``      MFCC, DTW, MCD-DTW and its length-weighted variant
- ``datagen``      synthetic mixtures and dubbing instances
- ``report``       PNG figures and PGM dumps
- ``cli``          the ``flowdub`` command
"""

__version__ = "0.1.0"
