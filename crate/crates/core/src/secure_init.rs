//! Initial node embeddings `h0 = x . W` from vertically split features.
//!
//! In collaborative mode every holder secret-shares its feature block, the
//! holders multiply the shared features with the shared weight `W` (diagonal
//! terms locally, cross terms with Beaver triples) and open the product to
//! all holders. `W` itself stays secret-shared for the whole run.
//!
//! Opening `h0` reveals a linear function of everyone's features to every
//! holder. That is how the protocol is defined and it is kept as is.

use alloc::vec::Vec;

use ndarray::Array2;
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::PartitionedGraph;
use crate::party::PartyId;
use crate::ring::FixedPointCodec;
use crate::sharing::{matmul_shared_raw, reveal_all, shr, transpose_matmul_public, truncate_shares, ShareTensor, TripleSource};
use crate::tensor::{uniform, Matrix};
use crate::transcript::{Phase, ShareChannel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitMode {
    #[default]
    Collaborative,
    /// Each holder embeds only its own block with a private weight.
    Individual,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitEmbeddingConfig {
    pub embed_dim: usize,
    pub mode: InitMode,
    pub codec: FixedPointCodec,
}

impl InitEmbeddingConfig {
    pub fn validate(&self, graph: &PartitionedGraph) -> Result<()> {
        if self.embed_dim == 0 {
            return Err(Error::Config("embedding dimension must be at least 1".into()));
        }
        for h in &graph.holders {
            if h.features.ncols() == 0 {
                return Err(Error::Config(alloc::format!("holder {} owns no feature columns", h.id)));
            }
        }
        Ok(())
    }
}

/// Holder 0 draws `W ~ U(-1/sqrt(d), 1/sqrt(d))` of shape `F x d` and shares it.
/// A lone holder keeps the encoded matrix as its only share.
pub fn init_weight_shares<R: Rng + ?Sized>(
    graph: &PartitionedGraph,
    embed_dim: usize,
    codec: FixedPointCodec,
    rng: &mut R,
) -> Result<Vec<ShareTensor>> {
    let limit = 1.0 / libm::sqrt(embed_dim as f64);
    let w = uniform((graph.feature_dim(), embed_dim), limit, rng);
    let enc = codec.encode_matrix(&w)?;
    let ids = graph.holder_ids();
    if ids.len() == 1 {
        return Ok(alloc::vec![ShareTensor::new(ids[0], enc, codec)]);
    }
    shr(&enc, &ids, codec, rng)
}

/// Every holder shares its block with every other holder; party `j` then
/// concatenates the pieces it holds in holder order.
pub fn share_features<C: ShareChannel + ?Sized, R: Rng + ?Sized>(
    graph: &PartitionedGraph,
    codec: FixedPointCodec,
    net: &mut C,
    rng: &mut R,
) -> Result<Vec<ShareTensor>> {
    let ids = graph.holder_ids();
    let n = graph.node_count;
    if ids.len() == 1 {
        let x = codec.encode_matrix(&graph.holders[0].features)?;
        return Ok(alloc::vec![ShareTensor::new(ids[0], x, codec)]);
    }
    let bytes = codec.ring().element_bytes();
    let mut concat: Vec<Array2<u64>> = ids.iter().map(|_| Array2::zeros((n, graph.feature_dim()))).collect();
    for h in &graph.holders {
        let enc = codec.encode_matrix(&h.features)?;
        let pieces = shr(&enc, &ids, codec, rng)?;
        for (j, piece) in pieces.iter().enumerate() {
            let received = if piece.owner == h.id {
                piece.data.clone()
            } else {
                net.transfer(Phase::ShareDistribution, h.id, piece.owner, &piece.data, bytes)
            };
            concat[j].slice_mut(ndarray::s![.., h.feature_range.clone()]).assign(&received);
        }
    }
    Ok(ids.iter().zip(concat).map(|(&p, d)| ShareTensor::new(p, d, codec)).collect())
}

/// Result of one collaborative round.
#[derive(Debug, Clone)]
pub struct SecureInit {
    /// `h0`, identical at every holder.
    pub h0: Matrix,
    /// Each holder's share of the concatenated features, kept for the backward pass.
    pub x_shares: Vec<ShareTensor>,
}

pub fn secure_initial_embeddings<C, T, R>(
    graph: &PartitionedGraph,
    w_shares: &[ShareTensor],
    triples: &mut T,
    net: &mut C,
    rng: &mut R,
) -> Result<SecureInit>
where
    C: ShareChannel + ?Sized,
    T: TripleSource + ?Sized,
    R: Rng + ?Sized,
{
    let ids = graph.holder_ids();
    let codec = w_shares.first().ok_or(Error::MissingShare(ids[0]))?.codec;
    if w_shares.len() != ids.len() {
        return Err(Error::shape("weight shares", (ids.len(), 0), (w_shares.len(), 0)));
    }
    for (s, &p) in w_shares.iter().zip(&ids) {
        if s.owner != p {
            return Err(Error::OwnerMismatch { expected: p, found: s.owner });
        }
        if s.shape().0 != graph.feature_dim() {
            return Err(Error::shape("weight share", (graph.feature_dim(), s.shape().1), s.shape()));
        }
    }
    let x_shares = share_features(graph, codec, net, rng)?;
    let raw = matmul_shared_raw(&x_shares, w_shares, triples, net)?;
    let opened = reveal_all(&raw, Phase::ShareReconstruct, net)?;
    let h0 = codec.decode_matrix(&codec.truncate_matrix(&opened));
    Ok(SecureInit { h0, x_shares })
}

/// `h0_i = x^i . W^i` per holder, with no communication.
pub fn individual_initial_embeddings(graph: &PartitionedGraph, weights: &[Matrix]) -> Result<Vec<Matrix>> {
    if weights.len() != graph.holders.len() {
        return Err(Error::shape("individual weights", (graph.holders.len(), 0), (weights.len(), 0)));
    }
    graph
        .holders
        .iter()
        .zip(weights)
        .map(|(h, w)| {
            if w.nrows() != h.features.ncols() {
                return Err(Error::shape("individual weight", (h.features.ncols(), w.ncols()), w.dim()));
            }
            Ok(h.features.dot(w))
        })
        .collect()
}

fn truncate_any<C: ShareChannel + ?Sized>(shares: &[ShareTensor], net: &mut C) -> Result<Vec<ShareTensor>> {
    if shares.len() == 1 {
        let s = &shares[0];
        return Ok(alloc::vec![ShareTensor::new(s.owner, s.codec.truncate_matrix(&s.data), s.codec)]);
    }
    truncate_shares(shares, net)
}

/// Shares of `dL/dW = x^T . G` where `G = sum_i G_i` and `G_i` is holder `i`'s
/// gradient of the loss with respect to its copy of `h0`.
///
/// The holders exchange their `G_i` so that `G` is public among them; the
/// product with the shared features is then local.
pub fn secure_init_backward<C: ShareChannel + ?Sized>(
    x_shares: &[ShareTensor],
    contributions: &[(PartyId, Matrix)],
    net: &mut C,
) -> Result<Vec<ShareTensor>> {
    let first = x_shares.first().ok_or(Error::TooFewParties(0))?;
    let codec = first.codec;
    let ring = codec.ring();
    let n = first.shape().0;
    let d = contributions.first().map(|(_, g)| g.ncols()).ok_or(Error::TooFewParties(0))?;
    let mut g_sum = Array2::<u64>::zeros((n, d));
    for (from, g) in contributions {
        if g.dim() != (n, d) {
            return Err(Error::shape("h0 gradient", (n, d), g.dim()));
        }
        let enc = codec.encode_matrix(g)?;
        for s in x_shares.iter().filter(|s| s.owner != *from) {
            net.transfer(Phase::WeightSync, *from, s.owner, &enc, ring.element_bytes());
        }
        ring.add_assign(&mut g_sum, &enc);
    }
    let raw = x_shares.iter().map(|x| transpose_matmul_public(x, &g_sum)).collect::<Result<Vec<_>>>()?;
    truncate_any(&raw, net)
}

/// `<W>_i <- (1 - lr l2) <W>_i - lr <dW>_i`, with the public constants encoded.
pub fn update_weight_shares<C: ShareChannel + ?Sized>(
    w_shares: &[ShareTensor],
    grad_shares: &[ShareTensor],
    lr: f64,
    l2: f64,
    net: &mut C,
) -> Result<Vec<ShareTensor>> {
    let first = w_shares.first().ok_or(Error::TooFewParties(0))?;
    let codec = first.codec;
    let ring = codec.ring();
    let keep = codec.encode(1.0 - lr * l2)?;
    let step = codec.encode(lr)?;
    let mut raw = Vec::with_capacity(w_shares.len());
    for w in w_shares {
        let g = grad_shares.iter().find(|g| g.owner == w.owner).ok_or(Error::MissingShare(w.owner))?;
        if g.shape() != w.shape() {
            return Err(Error::shape("weight gradient share", w.shape(), g.shape()));
        }
        let mut data = w.data.mapv(|v| ring.mul(v, keep));
        let dec = g.data.mapv(|v| ring.mul(v, step));
        data = ring.sub_matrix(&data, &dec);
        raw.push(ShareTensor::new(w.owner, data, codec));
    }
    truncate_any(&raw, net)
}

/// Opens the weight shares; test and diagnostics helper.
pub fn reconstruct_weights(w_shares: &[ShareTensor]) -> Result<Matrix> {
    let first = w_shares.first().ok_or(Error::TooFewParties(0))?;
    let ids: Vec<PartyId> = w_shares.iter().map(|s| s.owner).collect();
    Ok(first.codec.decode_matrix(&crate::sharing::rec(&ids, w_shares)?))
}
