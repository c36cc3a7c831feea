//! Query/semantic fusion graphs built from [`crate::nncore`] blocks.
//!
//! [`adapter_forward`] adapts a semantic map to the tracking task using the
//! grid form of the queries; [`vsfm_forward`] fuses the adapted map back into
//! the `[N, M]` query matrix. [`fuse`] chains the two the way the tracker
//! does, sharing one query projection between them.

mod adapter;
mod gradcheck;
mod queries;
mod vsfm;

use rand::Rng;

use crate::nncore::{NamedArrays, NnError, ParamSet, Tensor, DEFAULT_HEADS};

pub use adapter::{adapter_forward, casa, AdapterActivations, AdapterParams};
pub use gradcheck::{
    grad_check_fusion, grad_check_fusion_with, GradCheckReport, GradProbe, GradSteps, InputGradient,
};
pub use queries::{gather_queries, reshape_queries, QueryLayout};
pub use vsfm::{
    vsfm_forward, vsfm_forward_with, GateOverride, VsfmActivations, VsfmOptions, VsfmParams,
};

/// Dimensions every parameter set in a fusion graph is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FusionShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub queries: usize,
    pub query_dim: usize,
    pub heads: usize,
}

impl FusionShape {
    /// Uses the largest head count up to the default that divides `channels`.
    pub fn new(channels: usize, height: usize, width: usize, queries: usize, query_dim: usize) -> Self {
        FusionShape {
            channels,
            height,
            width,
            queries,
            query_dim,
            heads: crate::nncore::MhaParams::heads_for(channels, DEFAULT_HEADS),
        }
    }

    pub fn map_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn query_shape(&self) -> [usize; 2] {
        [self.queries, self.query_dim]
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let dims = [self.channels, self.height, self.width, self.queries, self.query_dim];
        if dims.contains(&0) {
            return Err(NnError::Shape(format!("fusion dimensions must be positive: {self:?}")));
        }
        // A one-channel softmax gate is identically 1 and never mixes in the queries.
        if self.channels < 2 {
            return Err(NnError::Shape("fusion needs at least 2 channels".into()));
        }
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(NnError::Shape(format!(
                "{} channels not divisible by {} heads",
                self.channels, self.heads
            )));
        }
        Ok(())
    }
}

/// Both fusion graphs. The query projection inside `vsfm` also produces the
/// grid-form queries the adapter consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub adapter: AdapterParams,
    pub vsfm: VsfmParams,
}

impl FusionParams {
    pub fn init<R: Rng + ?Sized>(shape: FusionShape, rng: &mut R) -> Result<Self, NnError> {
        Ok(FusionParams {
            adapter: AdapterParams::init(shape, rng)?,
            vsfm: VsfmParams::init(shape, rng)?,
        })
    }

    pub fn shape(&self) -> FusionShape {
        self.vsfm.shape
    }

    pub fn to_arrays(&self) -> NamedArrays {
        let mut out = NamedArrays::new();
        self.adapter.export("adapter", &mut out);
        self.vsfm.export("vsfm", &mut out);
        out
    }

    pub fn from_arrays(arrays: &NamedArrays) -> Result<Self, NnError> {
        Ok(FusionParams {
            adapter: AdapterParams::import("adapter", arrays)?,
            vsfm: VsfmParams::import("vsfm", arrays)?,
        })
    }
}

/// Full path from a semantic map and a query matrix to fused queries.
#[derive(Debug, Clone)]
pub struct FusionTrace {
    pub query_grid: Tensor,
    pub adapter: AdapterActivations,
    pub vsfm: VsfmActivations,
}

pub fn fuse(
    x_s: &Tensor,
    x_q: &Tensor,
    params: &FusionParams,
    scores: Option<&[f64]>,
) -> Result<FusionTrace, NnError> {
    let shape = params.shape();
    let (query_grid, _) = reshape_queries(x_q, shape.map_shape(), &params.vsfm.query_projection, scores)?;
    let adapter = adapter_forward(&query_grid, x_s, &params.adapter)?;
    let options = VsfmOptions {
        scores,
        ..VsfmOptions::default()
    };
    let vsfm = vsfm_forward_with(&adapter.f_as, x_q, &params.vsfm, &options)?;
    Ok(FusionTrace {
        query_grid,
        adapter,
        vsfm,
    })
}

fn check_shape(t: &Tensor, expect: &[usize], what: &str) -> Result<(), NnError> {
    if t.shape() != expect {
        return Err(NnError::Shape(format!(
            "{what}: expected {expect:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}
