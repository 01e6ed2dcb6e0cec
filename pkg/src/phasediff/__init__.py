"""Joint estimation of phase and phase diffusion on few-photon optical probes."""

from phasediff.fockcore import (
    FockCutoff,
    QubitProbe,
    TwoModeState,
    beam_splitter,
    embed_qubit,
    make_holland_burnett,
    make_noon,
    make_split_photon,
)
from phasediff.channels import ChannelParams, DifferentiatedState, encode_with_derivatives
from phasediff.estimation import FisherMatrices, TradeoffReport, qfi_matrix, tradeoff_report
from phasediff.measurements import Povm

__version__ = "0.1.0"

__all__ = [
    "ChannelParams",
    "DifferentiatedState",
    "FisherMatrices",
    "FockCutoff",
    "Povm",
    "QubitProbe",
    "TradeoffReport",
    "TwoModeState",
    "beam_splitter",
    "embed_qubit",
    "encode_with_derivatives",
    "make_holland_burnett",
    "make_noon",
    "make_split_photon",
    "qfi_matrix",
    "tradeoff_report",
]
