"""Joint BS beamforming, RIS phase and RIS association via a heterogeneous GNN."""
