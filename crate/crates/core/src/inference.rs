//! Embedding inference: run a trained tree of experiments on an environment.
//!
//! Starting at the root, the node's plan is rolled out on a freshly reset
//! environment, the outcome is labelled with the node's cluster model and the
//! walk continues in the matching child. The walk ends at a leaf or at a node
//! without a usable experiment, so unseen environments routed into untrained
//! branches receive a shorter embedding instead of an error.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::curiosity::assign_cluster;
use crate::envworld::{rollout, EnvSpec, ObsMask};
use crate::error::{Error, Result};
use crate::hierarchy::CausalTree;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CausalEmbedding {
    pub env_id: u32,
    /// One label per executed experiment, root first.
    pub bits: Vec<u8>,
    /// Ids of the nodes whose experiments were executed.
    pub path: Vec<String>,
    pub valid_prefix_len: usize,
}

impl CausalEmbedding {
    pub fn bit_string(&self) -> String {
        self.bits.iter().map(|b| char::from(b'0' + b)).collect()
    }
}

fn check_compatible(tree: &CausalTree, spec: &EnvSpec, mask: ObsMask) -> Result<()> {
    spec.validate()?;
    if mask != tree.mask {
        return Err(Error::Contract(format!(
            "observation mask {mask} does not match the tree's mask {}",
            tree.mask
        )));
    }
    if spec.world != tree.world {
        return Err(Error::Contract(format!(
            "env {} uses world constants that differ from the tree's",
            spec.env_id
        )));
    }
    Ok(())
}

/// Embedding of `spec` under the tree's own observation mask.
pub fn infer_embedding(tree: &CausalTree, spec: &EnvSpec) -> Result<CausalEmbedding> {
    infer_embedding_masked(tree, spec, tree.mask)
}

/// Like [`infer_embedding`], but rejects a `mask` other than the one the tree
/// was trained with.
pub fn infer_embedding_masked(tree: &CausalTree, spec: &EnvSpec, mask: ObsMask) -> Result<CausalEmbedding> {
    check_compatible(tree, spec, mask)?;
    let mut bits = Vec::new();
    let mut path = Vec::new();
    let mut node = &tree.root;
    while bits.len() < tree.k {
        let Some(exp) = node.active_experiment() else {
            break;
        };
        let traj = rollout(spec, &exp.plan, tree.mask)?;
        let label = assign_cluster(&exp.model, &traj)?;
        bits.push(label);
        path.push(node.id.clone());
        match node.child(label) {
            Some(child) => node = child,
            None => break,
        }
    }
    Ok(CausalEmbedding {
        env_id: spec.env_id,
        valid_prefix_len: bits.len(),
        bits,
        path,
    })
}

/// Embeddings for many envs, in input order.
pub fn infer_batch(tree: &CausalTree, specs: &[EnvSpec], mask: ObsMask) -> Result<Vec<CausalEmbedding>> {
    specs.par_iter().map(|s| infer_embedding_masked(tree, s, mask)).collect()
}

pub fn write_embeddings_csv<W: Write>(embeddings: &[CausalEmbedding], mut out: W) -> std::io::Result<()> {
    writeln!(out, "env_id,bits,valid_prefix_len")?;
    for e in embeddings {
        writeln!(out, "{},{},{}", e.env_id, e.bit_string(), e.valid_prefix_len)?;
    }
    Ok(())
}
