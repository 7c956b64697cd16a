"""Simulation and analysis of spatially multiplexed twin-beam secret sharing.

Synthesizes quantum-correlated homodyne quadrature traces for any number of
probe/conjugate channel pairs, turns them into bit streams with a
bandpass/integrate/sign pipeline, runs an XOR secret sharing session over the
streams and checks squeezing, randomness and agreement statistics.
"""

from twinkey.gaussian import (
    ChannelModel,
    CovarianceMatrix,
    covariance_from_joint_variances,
    entanglement_witness,
    pearson_correlation,
    rho_for_agreement,
    sign_agreement,
    squeezing_db,
    xor_agreement,
)
from twinkey.synth import QuadratureTrace, SynthConfig, synth_pair, synth_shot_noise
from twinkey.dsp import BitStream, FilterSpec, bandpass, binarize, slice_integrate
from twinkey.keying import agreement, agreement_matrix, form_key, run_session, subset_report
from twinkey.randtests import battery

__version__ = "0.1.0"

__all__ = [
    "BitStream",
    "ChannelModel",
    "CovarianceMatrix",
    "FilterSpec",
    "QuadratureTrace",
    "SynthConfig",
    "agreement",
    "agreement_matrix",
    "bandpass",
    "battery",
    "binarize",
    "covariance_from_joint_variances",
    "entanglement_witness",
    "form_key",
    "pearson_correlation",
    "rho_for_agreement",
    "run_session",
    "sign_agreement",
    "slice_integrate",
    "squeezing_db",
    "subset_report",
    "synth_pair",
    "synth_shot_noise",
    "xor_agreement",
]
