"""poselab: desk-scale 6D object pose estimation and tracking.

Render-and-compare pipeline over RGBD observations: a neural SDF object
field built from posed reference views, global pose hypothesis sampling,
learned iterative refinement with disentangled SE(3) updates, attention
based pose ranking, and frame-to-frame tracking.
"""

__version__ = "0.1.0"
