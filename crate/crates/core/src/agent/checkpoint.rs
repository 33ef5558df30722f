//! Checkpoint directories: `manifest.json` plus one little-endian `f32` file
//! per parameter tensor, named `<group>.<tensor>.f32`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentConfig, AgentError};
use crate::diff::Tensor;
use crate::nets::{GruParams, Mlp, ModelParams, ParamGroup, PolicyParams, QParams};
use crate::persist;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEntry {
    pub name: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub state_dim: usize,
    pub updates: u64,
    /// Env steps taken by the run that wrote the checkpoint.
    pub env_steps: usize,
    pub config: AgentConfig,
    pub groups: Vec<GroupEntry>,
}

fn groups(agent: &Agent) -> Vec<(&'static str, Vec<String>, Vec<&Tensor>)> {
    let (encoder, model, q, policy, log_alpha) = agent.parts();
    let mut out = Vec::new();
    if let Some(e) = encoder {
        out.push(("encoder", e.param_names(), e.params()));
    }
    out.push(("model", model.param_names(), model.params()));
    let names = ["q1", "q2", "q1_target", "q2_target"];
    for (name, net) in names.into_iter().zip(q.online.iter().chain(&q.target)) {
        out.push((name, net.param_names(), net.params()));
    }
    out.push(("policy", policy.param_names(), policy.params()));
    out.push(("temperature", vec!["log_alpha".into()], vec![log_alpha]));
    out
}

/// Writes `agent` into `dir`, creating it if needed.
pub fn save(agent: &Agent, dir: &Path, env_steps: usize) -> Result<Manifest, AgentError> {
    fs::create_dir_all(dir)?;
    let mut entries = Vec::new();
    for (group, names, tensors) in groups(agent) {
        let mut list = Vec::new();
        for (name, t) in names.into_iter().zip(tensors) {
            let file = format!("{group}.{name}.f32");
            persist::write_f32(&dir.join(&file), t.data())?;
            list.push(TensorEntry {
                name,
                shape: t.shape().to_vec(),
                file,
            });
        }
        entries.push(GroupEntry {
            name: group.into(),
            tensors: list,
        });
    }
    let manifest = Manifest {
        obs_dim: agent.obs_dim(),
        action_dim: agent.action_dim(),
        state_dim: agent.state_dim(),
        updates: agent.updates(),
        env_steps,
        config: agent.config().clone(),
        groups: entries,
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, AgentError> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?)
}

fn fill<P: ParamGroup>(target: &mut P, group: &str, manifest: &Manifest, dir: &Path) -> Result<(), AgentError> {
    let entry = manifest
        .groups
        .iter()
        .find(|g| g.name == group)
        .ok_or_else(|| AgentError::InvalidConfig(format!("checkpoint lacks group `{group}`")))?;
    let names = target.param_names();
    if names.len() != entry.tensors.len() {
        return Err(AgentError::InvalidConfig(format!(
            "group `{group}`: expected {} tensors, checkpoint has {}",
            names.len(),
            entry.tensors.len()
        )));
    }
    for ((slot, name), e) in target.params_mut().into_iter().zip(names).zip(&entry.tensors) {
        if e.name != name || e.shape != slot.shape() {
            return Err(AgentError::InvalidConfig(format!(
                "group `{group}`: tensor `{}` {:?} does not match `{name}` {:?}",
                e.name,
                e.shape,
                slot.shape()
            )));
        }
        let data = persist::read_f32(&dir.join(&e.file), slot.len())?;
        slot.data_mut().copy_from_slice(&data);
    }
    Ok(())
}

struct Temperature(Tensor);

impl ParamGroup for Temperature {
    fn params(&self) -> Vec<&Tensor> {
        vec![&self.0]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.0]
    }

    fn param_names(&self) -> Vec<String> {
        vec!["log_alpha".into()]
    }
}

/// Rebuilds an agent from a checkpoint. Optimizer moments start fresh.
pub fn load(dir: &Path) -> Result<(Agent, Manifest), AgentError> {
    let m = read_manifest(dir)?;
    let cfg = m.config.clone();
    let (o, a) = (m.obs_dim, m.action_dim);
    let mut encoder = m
        .groups
        .iter()
        .any(|g| g.name == "encoder")
        .then(|| GruParams::zeros(o, a, cfg.hidden_dim));
    let s = encoder.as_ref().map_or(o, |e| e.hidden_dim);
    if s != m.state_dim {
        return Err(AgentError::InvalidConfig(format!(
            "manifest state_dim {} disagrees with encoder width {s}",
            m.state_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = ModelParams::new(s, a, &cfg.head_hidden, &mut rng);
    let mut q = QParams::new(s, a, &cfg.head_hidden, &mut rng);
    let mut policy = PolicyParams::new(s, a, &cfg.head_hidden, &mut rng);
    let mut temp = Temperature(Tensor::scalar(0.0));
    if let Some(e) = encoder.as_mut() {
        fill(e, "encoder", &m, dir)?;
    }
    fill(&mut model, "model", &m, dir)?;
    let [q1, q2] = &mut q.online;
    fill(q1, "q1", &m, dir)?;
    fill(q2, "q2", &m, dir)?;
    let [t1, t2]: &mut [Mlp; 2] = &mut q.target;
    fill(t1, "q1_target", &m, dir)?;
    fill(t2, "q2_target", &m, dir)?;
    fill(&mut policy, "policy", &m, dir)?;
    fill(&mut temp, "temperature", &m, dir)?;
    let agent = Agent::from_parts(cfg, o, a, encoder, model, q, policy, temp.0, m.updates);
    Ok((agent, m))
}
