"""Compositional latent representation of deforming 3D shapes.

Subpackages:
    autodiff  - reverse-mode autodiff engine, layers, Adam, weight files
    odeint    - adaptive Dormand-Prince 5(4) solver and adjoint gradients
    geometry  - meshes, occupancy queries, marching cubes, metrics
    datagen   - procedural warping-shapes dataset
    model     - encoders, latent dynamics, implicit occupancy decoder
    training  - identity-exchange training loop
    tasks     - reconstruction, motion transfer, completion, prediction
"""

__version__ = "0.1.0"
