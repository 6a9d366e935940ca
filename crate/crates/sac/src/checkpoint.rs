//! Binary agent checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MCSACKPT" | u32 version | [u8; 32] env hash
//! u64 meta length | meta JSON (hyperparameters, dims, counters, RNG state)
//! u32 tensor count | per tensor: u32 name length, name, u32 rank,
//!                    u64 dims…, f64 data… (column-major)
//! ```

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use magcool_core::EnvConfig;
use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{Hyperparams, SacAgent};
use crate::nn::{Adam, Grads, Mlp, ScalarAdam};
use crate::{Result, SacError};

pub const MAGIC: &[u8; 8] = b"MCSACKPT";
pub const VERSION: u32 = 1;

/// SHA-256 of the canonical JSON form of an environment configuration.
pub fn env_hash(cfg: &EnvConfig) -> [u8; 32] {
    let json = serde_json::to_vec(cfg).expect("EnvConfig serialises");
    Sha256::digest(&json).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    hp: Hyperparams,
    obs_dim: usize,
    act_dim: usize,
    updates: u64,
    adam_steps: [u64; 4],
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct AgentCheckpoint {
    pub env_hash: [u8; 32],
    pub agent: SacAgent,
}

fn put_mlp(t: &mut BTreeMap<String, Tensor>, prefix: &str, net: &Mlp) {
    for (k, l) in net.layers.iter().enumerate() {
        t.insert(
            format!("{prefix}.{k}.weight"),
            Tensor {
                shape: vec![l.weight.nrows(), l.weight.ncols()],
                data: l.weight.as_slice().to_vec(),
            },
        );
        t.insert(
            format!("{prefix}.{k}.bias"),
            Tensor {
                shape: vec![l.bias.len()],
                data: l.bias.as_slice().to_vec(),
            },
        );
    }
}

fn put_grads(t: &mut BTreeMap<String, Tensor>, prefix: &str, g: &Grads) {
    let net = Mlp {
        layers: g
            .layers
            .iter()
            .map(|(w, b)| crate::nn::Dense {
                weight: w.clone(),
                bias: b.clone(),
            })
            .collect(),
    };
    put_mlp(t, prefix, &net);
}

fn take_mlp(t: &BTreeMap<String, Tensor>, prefix: &str, like: &Mlp) -> Result<Mlp> {
    let mut out = like.clone();
    for (k, l) in out.layers.iter_mut().enumerate() {
        let w = get(t, &format!("{prefix}.{k}.weight"), &[l.weight.nrows(), l.weight.ncols()])?;
        l.weight = DMatrix::from_column_slice(l.weight.nrows(), l.weight.ncols(), &w.data);
        let b = get(t, &format!("{prefix}.{k}.bias"), &[l.bias.len()])?;
        l.bias = DVector::from_column_slice(&b.data);
    }
    Ok(out)
}

fn take_grads(t: &BTreeMap<String, Tensor>, prefix: &str, like: &Mlp) -> Result<Grads> {
    let net = take_mlp(t, prefix, like)?;
    Ok(Grads {
        layers: net.layers.into_iter().map(|l| (l.weight, l.bias)).collect(),
    })
}

fn get<'a>(t: &'a BTreeMap<String, Tensor>, name: &str, shape: &[usize]) -> Result<&'a Tensor> {
    let x = t
        .get(name)
        .ok_or_else(|| SacError::Format(format!("missing tensor {name}")))?;
    if x.shape != shape {
        return Err(SacError::Format(format!(
            "tensor {name} has shape {:?}, expected {shape:?}",
            x.shape
        )));
    }
    Ok(x)
}

fn scalar(v: f64) -> Tensor {
    Tensor {
        shape: vec![1],
        data: vec![v],
    }
}

impl AgentCheckpoint {
    pub fn new(agent: &SacAgent, env: &EnvConfig) -> Self {
        Self {
            env_hash: env_hash(env),
            agent: agent.clone(),
        }
    }

    fn tensors(&self) -> BTreeMap<String, Tensor> {
        let a = &self.agent;
        let mut t = BTreeMap::new();
        put_mlp(&mut t, "policy", &a.policy);
        put_mlp(&mut t, "q1", &a.q1);
        put_mlp(&mut t, "q2", &a.q2);
        put_mlp(&mut t, "q1_target", &a.q1_target);
        put_mlp(&mut t, "q2_target", &a.q2_target);
        for (name, opt) in [("policy", &a.policy_opt), ("q1", &a.q1_opt), ("q2", &a.q2_opt)] {
            put_grads(&mut t, &format!("adam.{name}.m"), &opt.m);
            put_grads(&mut t, &format!("adam.{name}.v"), &opt.v);
        }
        t.insert("log_alpha".into(), scalar(a.log_alpha));
        t.insert("noise_std".into(), scalar(a.noise_std));
        t.insert(
            "adam.alpha".into(),
            Tensor {
                shape: vec![3],
                data: vec![a.alpha_opt.lr, a.alpha_opt.m, a.alpha_opt.v],
            },
        );
        t
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let a = &self.agent;
        let meta = Meta {
            hp: a.hp.clone(),
            obs_dim: a.obs_dim,
            act_dim: a.act_dim,
            updates: a.updates,
            adam_steps: [a.policy_opt.t, a.q1_opt.t, a.q2_opt.t, a.alpha_opt.t],
            rng: a.rng.clone(),
        };
        let meta = serde_json::to_vec(&meta).map_err(|e| SacError::Format(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.env_hash)?;
        w.write_all(&(meta.len() as u64).to_le_bytes())?;
        w.write_all(&meta)?;
        let tensors = self.tensors();
        w.write_all(&(tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &tensors {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape.len() as u32).to_le_bytes())?;
            for &d in &t.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut v = Vec::new();
        self.write_to(&mut v).expect("writing to memory cannot fail");
        v
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::fs::File::open(path)?)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(SacError::Format("not an agent checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(SacError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let mut env_hash = [0u8; 32];
        r.read_exact(&mut env_hash)?;
        let meta_len = read_u64(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta: Meta = serde_json::from_slice(&meta).map_err(|e| SacError::Format(e.to_string()))?;
        let count = read_u32(&mut r)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| SacError::Format(e.to_string()))?;
            let rank = read_u32(&mut r)?;
            let shape = (0..rank)
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| read_f64(&mut r)).collect::<Result<Vec<_>>>()?;
            tensors.insert(name, Tensor { shape, data });
        }
        let mut agent = SacAgent::new(meta.obs_dim, meta.act_dim, meta.hp, 0)?;
        agent.policy = take_mlp(&tensors, "policy", &agent.policy)?;
        agent.q1 = take_mlp(&tensors, "q1", &agent.q1)?;
        agent.q2 = take_mlp(&tensors, "q2", &agent.q2)?;
        agent.q1_target = take_mlp(&tensors, "q1_target", &agent.q1)?;
        agent.q2_target = take_mlp(&tensors, "q2_target", &agent.q2)?;
        let restore = |name: &str, net: &Mlp, t: u64, lr: f64| -> Result<Adam> {
            Ok(Adam {
                m: take_grads(&tensors, &format!("adam.{name}.m"), net)?,
                v: take_grads(&tensors, &format!("adam.{name}.v"), net)?,
                t,
                ..Adam::new(net, lr)
            })
        };
        let lr = agent.hp.lr;
        agent.policy_opt = restore("policy", &agent.policy, meta.adam_steps[0], lr)?;
        agent.q1_opt = restore("q1", &agent.q1, meta.adam_steps[1], lr)?;
        agent.q2_opt = restore("q2", &agent.q2, meta.adam_steps[2], lr)?;
        agent.log_alpha = get(&tensors, "log_alpha", &[1])?.data[0];
        agent.noise_std = get(&tensors, "noise_std", &[1])?.data[0];
        let aa = &get(&tensors, "adam.alpha", &[3])?.data;
        agent.alpha_opt = ScalarAdam {
            lr: aa[0],
            t: meta.adam_steps[3],
            m: aa[1],
            v: aa[2],
        };
        agent.updates = meta.updates;
        agent.rng = meta.rng;
        if !(agent.policy.is_finite() && agent.q1.is_finite() && agent.q2.is_finite()) {
            return Err(SacError::NonFinite("checkpoint contains non-finite weights".into()));
        }
        Ok(Self { env_hash, agent })
    }

    /// Errors unless the checkpoint was written for `env`.
    pub fn ensure_compatible(&self, env: &EnvConfig) -> Result<()> {
        let h = env_hash(env);
        if h != self.env_hash {
            return Err(SacError::EnvMismatch {
                checkpoint: hex(&self.env_hash),
                config: hex(&h),
            });
        }
        Ok(())
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
