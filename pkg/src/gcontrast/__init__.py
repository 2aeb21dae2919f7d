"""Self-supervised graph contrastive learning with similarity-preserving
and adversarial views, plus the evaluation and diagnostic harness around it.

Submodules
----------
graph       : graph storage, bundle IO, kNN view, augmentation, sampling
tape        : reverse-mode gradient engine over dense float64 matrices
model       : GCN/MLP encoders, projection head, Adam
loss        : pairwise contrastive loss and the weighted cross-view objective
attack      : gradient-based structural flips and feature masking
train       : training loop, config parsing, embedding export
evaluate    : linear probe, link AUC, clustering NMI, overlap score
diagnostics : gradient scatter records and the closed-form perturbation check
cli         : `gcontrast` command line entry point
"""

__version__ = "0.1.0"
