//! Attribute conditioning for the generator.
//!
//! A condition is a per-attribute representation `Z` (`k × d′`) scaled row
//! by row with the requested attribute change: `Z_t = Z ⊙ (t − s)` in
//! difference mode and `Z ⊙ t` in standard mode. The representation comes
//! from one of several sources; the graph-convolutional one propagates
//! initial node features over the normalized co-occurrence adjacency,
//! `X⁽ˡ⁺¹⁾ = LeakyReLU(Ĉ X⁽ˡ⁾ θ⁽ˡ⁾)`, and stays inside the autodiff graph so
//! the GAN losses train `θ`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::cooccurrence::{AttributeVector, CooccurrenceMatrix};
use crate::error::{dim_err, Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::rng::{self, Rng};
use crate::tensor::Tensor;

pub const DEFAULT_SLOPE: f64 = 0.2;

/// Source of the per-attribute representation `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    OneHot,
    LatentReprs,
    Word2Vec,
    CooccurrenceRows,
    AttrbsWeights,
    GcnReprs,
}

impl ConditionKind {
    pub const ALL: [ConditionKind; 6] = [
        ConditionKind::OneHot,
        ConditionKind::LatentReprs,
        ConditionKind::Word2Vec,
        ConditionKind::CooccurrenceRows,
        ConditionKind::AttrbsWeights,
        ConditionKind::GcnReprs,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConditionKind::OneHot => "one_hot",
            ConditionKind::LatentReprs => "latent_reprs",
            ConditionKind::Word2Vec => "word2vec",
            ConditionKind::CooccurrenceRows => "cooccurrence_rows",
            ConditionKind::AttrbsWeights => "attrbs_weights",
            ConditionKind::GcnReprs => "gcn_reprs",
        }
    }
}

impl fmt::Display for ConditionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConditionKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(alloc::format!("unknown condition kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionMode {
    /// Scale by the target vector `t`.
    Std,
    /// Scale by `t − s`.
    Diff,
}

impl ConditionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditionMode::Std => "std",
            ConditionMode::Diff => "diff",
        }
    }
}

impl fmt::Display for ConditionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConditionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "std" => Ok(ConditionMode::Std),
            "diff" => Ok(ConditionMode::Diff),
            _ => Err(Error::Config(alloc::format!("unknown condition mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConditionSpec {
    pub kind: ConditionKind,
    pub mode: ConditionMode,
    /// `d′`; used by `latent_reprs` and as the GCN output width.
    pub embed_dim: usize,
}

/// Fixed per-attribute vectors loaded from a file.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub names: Vec<String>,
    pub dim: usize,
    /// Row-major `names.len() × dim`.
    pub vectors: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(names: Vec<String>, dim: usize, vectors: Vec<f64>) -> Result<Self> {
        if dim == 0 || vectors.len() != names.len() * dim {
            return Err(dim_err!(
                "embedding table: {} names × {dim} dims vs {} values",
                names.len(),
                vectors.len()
            ));
        }
        Ok(Self { names, dim, vectors })
    }

    pub fn row(&self, name: &str) -> Option<&[f64]> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(&self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// Rows reordered to `order`; every name must be present.
    pub fn matrix_for(&self, order: &[String]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(order.len() * self.dim);
        for name in order {
            let row = self.row(name).ok_or_else(|| {
                Error::Config(alloc::format!("embedding table has no row for `{name}`"))
            })?;
            out.extend_from_slice(row);
        }
        Ok(out)
    }
}

/// `Z` and the scaled condition `Z_t` (`[B, k, d′]`).
#[derive(Debug, Clone)]
pub struct ConditionMatrix {
    pub z: Tensor,
    pub zt: Tensor,
}

impl ConditionMatrix {
    pub fn batch(&self) -> usize {
        self.zt.shape()[0]
    }

    /// Row-major flatten per sample: `[B, k·d′]`.
    pub fn flat(&self) -> Result<Tensor> {
        let s = self.zt.shape();
        self.zt.reshape(&[s[0], s[1] * s[2]])
    }
}

/// Forward pass of a GCN stack over a fixed adjacency.
pub fn gcn_forward(c_hat: &Tensor, x0: &Tensor, thetas: &[Tensor], slope: f64) -> Result<Tensor> {
    let k = c_hat.shape().first().copied().unwrap_or(0);
    if c_hat.shape() != [k, k] || x0.shape().len() != 2 || x0.shape()[0] != k {
        return Err(dim_err!(
            "gcn: adjacency {:?} incompatible with node features {:?}",
            c_hat.shape(),
            x0.shape()
        ));
    }
    let mut x = x0.clone();
    for (l, theta) in thetas.iter().enumerate() {
        if theta.shape().len() != 2 || theta.shape()[0] != x.shape()[1] {
            return Err(dim_err!(
                "gcn layer {l}: θ {:?} does not accept width {}",
                theta.shape(),
                x.shape()[1]
            ));
        }
        x = c_hat.matmul(&x)?.matmul(theta)?.leaky_relu(slope)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub theta: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

/// GCN over the attribute graph with parameters held in a [`ParamStore`]
/// under `gcn.*`.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphConditioner {
    pub layers: Vec<GcnLayer>,
    pub x0: ParamId,
    pub c_hat: Vec<f64>,
    pub k: usize,
    pub slope: f64,
}

impl GraphConditioner {
    pub const X0_NAME: &'static str = "gcn.x0";

    /// `widths` lists the output width of each layer; the input width is the
    /// column count of `x0` (`k × d`, row-major).
    pub fn new(
        store: &mut ParamStore,
        c_hat: &[f64],
        k: usize,
        x0: Vec<f64>,
        widths: &[usize],
        r: &mut Rng,
    ) -> Result<Self> {
        if c_hat.len() != k * k || k == 0 || !x0.len().is_multiple_of(k) || x0.is_empty() {
            return Err(dim_err!("gcn: k={k}, Ĉ has {} entries, X0 has {}", c_hat.len(), x0.len()));
        }
        if widths.is_empty() || widths.contains(&0) {
            return Err(dim_err!("gcn layer widths must be positive, got {:?}", widths));
        }
        let d = x0.len() / k;
        let x0 = store.add(Self::X0_NAME, &[k, d], x0)?;
        let mut layers = Vec::with_capacity(widths.len());
        let mut d_in = d;
        for (l, &d_out) in widths.iter().enumerate() {
            let std = libm::sqrt(2.0 / (d_in + d_out) as f64);
            let theta = store.add_normal(&alloc::format!("gcn.theta{l}"), &[d_in, d_out], std, r)?;
            layers.push(GcnLayer { theta, d_in, d_out });
            d_in = d_out;
        }
        Ok(Self { layers, x0, c_hat: c_hat.to_vec(), k, slope: DEFAULT_SLOPE })
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.d_out).unwrap_or(0)
    }

    pub fn theta_ids(&self) -> Vec<ParamId> {
        self.layers.iter().map(|l| l.theta).collect()
    }

    pub fn forward(&self, bound: &Bound) -> Result<Tensor> {
        let c_hat = Tensor::new(self.c_hat.clone(), &[self.k, self.k])?;
        let thetas: Vec<Tensor> = self.layers.iter().map(|l| bound.get(l.theta).clone()).collect();
        gcn_forward(&c_hat, bound.get(self.x0), &thetas, self.slope)
    }
}

/// Per-row coefficients of the condition: `t − s` or `t`.
pub fn condition_coefficients(
    mode: ConditionMode,
    targets: &[AttributeVector],
    sources: &[AttributeVector],
    k: usize,
) -> Result<Tensor> {
    if targets.len() != sources.len() || targets.is_empty() {
        return Err(dim_err!(
            "{} targets for {} sources",
            targets.len(),
            sources.len()
        ));
    }
    let mut coef = Vec::with_capacity(targets.len() * k);
    for (t, s) in targets.iter().zip(sources) {
        if t.len() != k || s.len() != k {
            return Err(dim_err!("attribute vectors must have length {k}"));
        }
        for i in 0..k {
            let ti = f64::from(t.values()[i]);
            coef.push(match mode {
                ConditionMode::Diff => ti - f64::from(s.values()[i]),
                ConditionMode::Std => ti,
            });
        }
    }
    Tensor::new(coef, &[targets.len(), k])
}

/// `Z_t` for a batch of `(t, s)` pairs given `Z`.
pub fn assemble_condition(
    mode: ConditionMode,
    z: &Tensor,
    targets: &[AttributeVector],
    sources: &[AttributeVector],
) -> Result<ConditionMatrix> {
    let k = z.shape().first().copied().unwrap_or(0);
    let coef = condition_coefficients(mode, targets, sources, k)?;
    let zt = Tensor::scale_rows(z, &coef)?;
    Ok(ConditionMatrix { z: z.clone(), zt })
}

/// Append the flattened condition to each latent row: `[B, L + k·d′]`.
pub fn inject_decoder(latent: &Tensor, cond: &ConditionMatrix) -> Result<Tensor> {
    if latent.shape().len() != 2 || latent.shape()[0] != cond.batch() {
        return Err(dim_err!(
            "latent {:?} vs condition batch {}",
            latent.shape(),
            cond.batch()
        ));
    }
    Tensor::concat(&[latent.clone(), cond.flat()?], 1)
}

/// Append one constant plane per condition scalar: `[B, C + k·d′, H, W]`.
pub fn inject_encoder(image: &Tensor, cond: &ConditionMatrix) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 4 || s[0] != cond.batch() || s[2] == 0 || s[3] == 0 {
        return Err(dim_err!("image {:?} vs condition batch {}", s, cond.batch()));
    }
    let planes = cond.flat()?.tile_planes(s[2], s[3])?;
    Tensor::concat(&[image.clone(), planes], 1)
}

/// Optional inputs needed by some condition kinds.
#[derive(Debug, Clone, Default)]
pub struct ConditionSources {
    pub table: Option<EmbeddingTable>,
    pub cooccurrence: Option<CooccurrenceMatrix>,
    pub gcn: Option<GraphConditioner>,
}

#[derive(Debug, Clone, PartialEq)]
enum ZSource {
    Fixed(Vec<f64>),
    Graph(GraphConditioner),
}

/// A resolved [`ConditionSpec`]: knows how to produce `Z` for a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioner {
    pub spec: ConditionSpec,
    k: usize,
    width: usize,
    source: ZSource,
}

impl Conditioner {
    /// `names` fixes the attribute order; `r` seeds the frozen `latent_reprs`
    /// vectors.
    pub fn new(
        spec: ConditionSpec,
        names: &[String],
        sources: ConditionSources,
        r: &mut Rng,
    ) -> Result<Self> {
        let k = names.len();
        let missing = |what: &str| {
            Error::Config(alloc::format!("condition kind `{}` needs {what}", spec.kind))
        };
        let (width, source) = match spec.kind {
            ConditionKind::OneHot => (1, ZSource::Fixed(vec![1.0; k])),
            ConditionKind::LatentReprs => {
                if spec.embed_dim == 0 {
                    return Err(Error::Config(String::from("latent_reprs needs embed_dim ≥ 1")));
                }
                let z = (0..k * spec.embed_dim).map(|_| rng::normal(r)).collect();
                (spec.embed_dim, ZSource::Fixed(z))
            }
            ConditionKind::Word2Vec | ConditionKind::AttrbsWeights => {
                let table = sources.table.ok_or_else(|| missing("an embedding table"))?;
                (table.dim, ZSource::Fixed(table.matrix_for(names)?))
            }
            ConditionKind::CooccurrenceRows => {
                let c = sources.cooccurrence.ok_or_else(|| missing("a co-occurrence matrix"))?;
                if c.k() != k {
                    return Err(dim_err!("co-occurrence matrix is {}×{}, need k={k}", c.k(), c.k()));
                }
                (k, ZSource::Fixed(c.c))
            }
            ConditionKind::GcnReprs => {
                let g = sources.gcn.ok_or_else(|| missing("a graph conditioner"))?;
                if g.k != k {
                    return Err(dim_err!("graph conditioner has {} nodes, need {k}", g.k));
                }
                (g.out_dim(), ZSource::Graph(g))
            }
        };
        Ok(Self { spec, k, width, source })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// `d′`, the representation width per attribute.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Flattened condition width `k·d′`.
    pub fn flat_width(&self) -> usize {
        self.k * self.width
    }

    pub fn graph(&self) -> Option<&GraphConditioner> {
        match &self.source {
            ZSource::Graph(g) => Some(g),
            ZSource::Fixed(_) => None,
        }
    }

    pub fn z(&self, bound: &Bound) -> Result<Tensor> {
        match &self.source {
            ZSource::Fixed(z) => Tensor::new(z.clone(), &[self.k, self.width]),
            ZSource::Graph(g) => g.forward(bound),
        }
    }

    pub fn assemble(
        &self,
        bound: &Bound,
        targets: &[AttributeVector],
        sources: &[AttributeVector],
    ) -> Result<ConditionMatrix> {
        assemble_condition(self.spec.mode, &self.z(bound)?, targets, sources)
    }
}
