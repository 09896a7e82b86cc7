"""Sequence-tagging formulation of role detection: HMM and linear-chain CRF."""
from .crf import CrfModel, FeatureTemplate, OptimizerConfig, crf_decode, crf_train, forward_backward, objective
from .evaluate import RoleScore, TaggerReport, role_precision_report, tag_sequences, write_tagger_table
from .hmm import HmmModel, default_tagset, hmm_train, viterbi, viterbi_decode

__all__ = [
    "CrfModel", "FeatureTemplate", "OptimizerConfig", "crf_decode", "crf_train", "forward_backward", "objective",
    "RoleScore", "TaggerReport", "role_precision_report", "tag_sequences", "write_tagger_table",
    "HmmModel", "default_tagset", "hmm_train", "viterbi", "viterbi_decode",
]
