"""Molecular graph (conditional) variational autoencoders over one-hot graph matrices."""

from mgcvae.cvae import Model, ModelConfig, elbo_loss, load_checkpoint, sample, save_checkpoint, train
from mgcvae.dataset import DatasetManifest, accept_molecule, batches, ingest, split
from mgcvae.evalkit import condition_table, metrics, morgan_fp, pca2
from mgcvae.molgraph import DEFAULT_SCHEMA, Atom, Bond, BondType, MolGraph, Schema, decode_matrix, encode_matrix, validate
from mgcvae.props import ConditionVector, bin_conditions, crippen_logp, crippen_mr
from mgcvae.smiles import canonicalize, parse_smiles, write_smiles

__version__ = "0.1.0"

__all__ = [
    "Atom", "Bond", "BondType", "ConditionVector", "DEFAULT_SCHEMA", "DatasetManifest", "Model", "ModelConfig",
    "MolGraph", "Schema", "accept_molecule", "batches", "bin_conditions", "canonicalize", "condition_table",
    "crippen_logp", "crippen_mr", "decode_matrix", "elbo_loss", "encode_matrix", "ingest", "load_checkpoint",
    "metrics", "morgan_fp", "parse_smiles", "pca2", "sample", "save_checkpoint", "split", "train", "validate",
    "write_smiles",
]
