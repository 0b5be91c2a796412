//! The editing model: a frozen backbone plus either the spatial-branch
//! adapter (the mechanism under study) or the direct-tuning baseline.

use std::path::Path;

use crate::adapter::{
    adapted_velocity_graph, load_adapted, save_adapted, trainable_parameters, Adapter,
};
use crate::backbone::{Backbone, Binder, Geometry, ModelConfig};
use crate::baseline::direct_velocity_graph;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::optim::Param;
use crate::rng::Rng;
use crate::tensor::{Element, Tensor};

/// How the condition stream is wired into the backbone.
pub enum EditModel<E> {
    /// Frozen backbone + positive/negative spatial branches (dual path).
    Adapted {
        backbone: Backbone<E>,
        adapter: Adapter<E>,
    },
    /// Sequence-concatenation baseline with fully tuned attention + FFN.
    DirectTuned { backbone: Backbone<E> },
}

/// Output of one graph-level forward.
pub struct ModelForward<E> {
    pub velocity: Var,
    /// Condition-stream modulation input rows (dual-path models only).
    pub c_mod_input: Option<Tensor<E>>,
}

impl<E: Element> EditModel<E> {
    /// Fresh adapted model: random frozen backbone + zero-cancelling adapter.
    pub fn new_adapted(cfg: ModelConfig, rank: usize, seed: u64) -> Result<Self> {
        let mut rng = Rng::derive(&[seed, 0x6261_636b]); // backbone stream
        let backbone = Backbone::init(cfg, &mut rng)?;
        let mut rng = Rng::derive(&[seed, 0x6164_6170]); // adapter stream
        let adapter = Adapter::init(&backbone, rank, &mut rng)?;
        Ok(EditModel::Adapted { backbone, adapter })
    }

    /// Direct-tuning baseline sharing the same backbone init stream, with
    /// attention and FFN weights unfrozen.
    pub fn new_direct_tuned(cfg: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = Rng::derive(&[seed, 0x6261_636b]);
        let mut backbone = Backbone::init(cfg, &mut rng)?;
        backbone.set_attention_ffn_trainable(true);
        Ok(EditModel::DirectTuned { backbone })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.backbone().cfg
    }

    pub fn backbone(&self) -> &Backbone<E> {
        match self {
            EditModel::Adapted { backbone, .. } => backbone,
            EditModel::DirectTuned { backbone } => backbone,
        }
    }

    pub fn adapter(&self) -> Option<&Adapter<E>> {
        match self {
            EditModel::Adapted { adapter, .. } => Some(adapter),
            EditModel::DirectTuned { .. } => None,
        }
    }

    /// Trainable parameters in fixed traversal order.
    pub fn trainable(&self) -> Vec<&Param<E>> {
        match self {
            EditModel::Adapted { backbone, adapter } => {
                trainable_parameters(backbone, Some(adapter))
            }
            EditModel::DirectTuned { backbone } => trainable_parameters(backbone, None),
        }
    }

    /// Mutable access to every parameter (frozen and trainable).
    pub fn all_params_mut(&mut self) -> Vec<&mut Param<E>> {
        match self {
            EditModel::Adapted { backbone, adapter } => {
                let mut out = backbone.params_mut();
                out.extend(adapter.params_mut());
                out
            }
            EditModel::DirectTuned { backbone } => backbone.params_mut(),
        }
    }

    /// Graph-level conditional velocity prediction.
    ///
    /// `z`/`c` are raw patch-pixel tokens `[B, N, p*p*3]`; one `(t, task)`
    /// row per batch element. Returns the velocity for the noisy stream.
    pub fn velocity_graph(
        &self,
        g: &Graph<E>,
        binder: &mut Binder,
        z: Var,
        c: Var,
        geom: Geometry,
        rows: &[(f64, usize)],
    ) -> Result<ModelForward<E>> {
        match self {
            EditModel::Adapted { backbone, adapter } => {
                let fwd = adapted_velocity_graph(g, binder, backbone, adapter, z, c, geom, rows)?;
                Ok(ModelForward {
                    velocity: fwd.velocity,
                    c_mod_input: Some(fwd.c_mod_input),
                })
            }
            EditModel::DirectTuned { backbone } => {
                let velocity = direct_velocity_graph(g, binder, backbone, z, c, geom, rows)?;
                Ok(ModelForward {
                    velocity,
                    c_mod_input: None,
                })
            }
        }
    }

    /// Plain-tensor wrapper: one forward pass, shared `(t, task)` rows.
    pub fn velocity_tokens(
        &self,
        z_tokens: &Tensor<E>,
        c_tokens: &Tensor<E>,
        geom: Geometry,
        t: f64,
        task: usize,
    ) -> Result<Tensor<E>> {
        let g = Graph::new();
        let mut binder = Binder::default();
        let z = g.constant(z_tokens.clone());
        let c = g.constant(c_tokens.clone());
        let b = z_tokens.shape()[0];
        let fwd = self.velocity_graph(&g, &mut binder, z, c, geom, &vec![(t, task); b])?;
        Ok(g.value(fwd.velocity))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        match self {
            EditModel::Adapted { backbone, adapter } => save_adapted(backbone, adapter, path),
            EditModel::DirectTuned { backbone } => backbone.save(path),
        }
    }

    pub fn load(&mut self, path: &Path) -> Result<()> {
        match self {
            EditModel::Adapted { backbone, adapter } => load_adapted(backbone, adapter, path),
            EditModel::DirectTuned { backbone } => backbone.load_into(path),
        }
    }
}

/// Load a checkpoint written by [`EditModel::save`], detecting the model
/// kind (and adapter rank) from the manifest: any delta entry means an
/// adapted model, otherwise a direct-tuned backbone.
pub fn load_model(cfg: ModelConfig, path: &Path) -> Result<EditModel<f32>> {
    let entries = crate::checkpoint::read_vfck(path)?;
    let rank = entries
        .iter()
        .find(|e| matches!(e.kind, crate::checkpoint::EntryKind::Delta) && e.name.ends_with(".down"))
        .map(|e| e.shape[0]);
    let mut model = match rank {
        Some(r) => EditModel::new_adapted(cfg, r, 0)?,
        None => {
            let mut m = EditModel::new_direct_tuned(cfg, 0)?;
            // trainability flags are runtime state, not checkpoint content
            if let EditModel::DirectTuned { backbone } = &mut m {
                backbone.set_attention_ffn_trainable(false);
            }
            m
        }
    };
    model.load(path)?;
    Ok(model)
}

/// Snapshot of every frozen parameter, for bit-level frozen-base audits.
pub struct FrozenSnapshot<E> {
    names: Vec<String>,
    values: Vec<Tensor<E>>,
}

impl<E: Element> FrozenSnapshot<E> {
    pub fn capture(model: &EditModel<E>) -> Self {
        let mut names = Vec::new();
        let mut values = Vec::new();
        for p in model.backbone().params() {
            if !p.trainable {
                names.push(p.name.clone());
                values.push(p.value.clone());
            }
        }
        FrozenSnapshot { names, values }
    }

    /// Names of frozen params whose bits changed since the snapshot.
    pub fn diff(&self, model: &EditModel<E>) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        let current: std::collections::BTreeMap<&str, &Tensor<E>> = model
            .backbone()
            .params()
            .into_iter()
            .map(|p| (p.name.as_str(), &p.value))
            .collect();
        for (name, old) in self.names.iter().zip(self.values.iter()) {
            let now = current.get(name.as_str()).ok_or_else(|| {
                Error::invalid("frozen_snapshot", format!("parameter '{name}' disappeared"))
            })?;
            if !now.bit_eq(old) {
                changed.push(name.clone());
            }
        }
        Ok(changed)
    }
}
