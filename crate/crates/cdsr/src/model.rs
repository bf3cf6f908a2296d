//! Model parameters, forward graphs and checkpoints.
//!
//! Parameters are grouped three ways: the sequence model and prediction
//! head (updated in both training phases), the imputation head, and the
//! propensity head. Every forward pass registers the parameters as tape
//! leaves and builds the graph row by row.

use crate::encoder::{embed_sequence, encode, real_length, EmbeddingVars, EncoderKind, EncoderVars, GruVars};
use crate::error::{Error, Result};
use crate::interest::{
    enhance, fuse_messages, group_flags, interest_similarity_var, project_real_rows,
    propagate_messages, similarity_from_projections, EnhancedSequence,
};
use std::rc::Rc;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

/// Which loss updates a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Sequence model, message passing and the prediction head.
    Model,
    /// Error-imputation head.
    Imputation,
    /// Propensity head.
    Propensity,
}

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub group: ParamGroup,
    /// Frozen parameters keep their initial values; the similarity
    /// transforms are frozen unless the auxiliary similarity weight is set.
    pub trainable: bool,
}

/// Named, grouped parameter tensors in fixed registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    fn add(&mut self, name: &str, group: ParamGroup, tensor: Tensor, trainable: bool) -> usize {
        self.params.push(Param { name: name.to_string(), tensor, group, trainable });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Param {
        &self.params[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Param {
        &mut self.params[idx]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }
}

/// Interest-group settings.
#[derive(Debug, Clone)]
pub struct MimConfig {
    /// Similarity threshold for group membership.
    pub threshold: f64,
    /// Source slots per target; the first slot is reserved for the same
    /// user's other-domain sequence.
    pub pool_size: usize,
    /// Weight of the auxiliary similarity regularizer; 0 leaves the
    /// similarity transforms untrained.
    pub aux_sim_weight: f64,
    /// Feed raw embedded sequences to grouping and propagation instead of
    /// encoder outputs.
    pub use_raw_embeddings: bool,
}

impl Default for MimConfig {
    fn default() -> Self {
        MimConfig { threshold: 0.7, pool_size: 32, aux_sim_weight: 0.0, use_raw_embeddings: false }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub num_domains: usize,
    /// Catalog sizes; item ids run 1..=V per domain.
    pub items_per_domain: Vec<usize>,
    pub d: usize,
    pub t: usize,
    pub encoder: EncoderKind,
    /// `None` disables cross-domain propagation entirely.
    pub mim: Option<MimConfig>,
    /// Lower clip for the propensity head output.
    pub p_min: f64,
    /// Share the hidden stack of the three heads instead of keeping three
    /// separate MLPs.
    pub shared_trunk: bool,
}

struct HeadIdx {
    layers: Vec<(usize, usize)>, // (weight, bias) pairs
}

struct MimIdx {
    w1: usize,
    w2: usize,
    w_ip: usize,
    w_c: usize,
    w_f: usize,
}

struct ParamIdx {
    item_tables: Vec<usize>,
    position: usize,
    gru: Option<[usize; 9]>,
    mim: Option<MimIdx>,
    /// Shared trunk layers when `shared_trunk` is set.
    trunk: Vec<(usize, usize)>,
    heads: [HeadIdx; 3],
}

/// The full learnable model.
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    idx: ParamIdx,
}

pub const HEAD_NAMES: [&str; 3] = ["prediction", "imputation", "propensity"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Prediction,
    Imputation,
    Propensity,
}

impl HeadKind {
    fn index(self) -> usize {
        match self {
            HeadKind::Prediction => 0,
            HeadKind::Imputation => 1,
            HeadKind::Propensity => 2,
        }
    }
}

impl Model {
    /// Initialise all parameters: weights uniform on
    /// [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero, padding embedding
    /// row pinned to zero.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.d == 0 || config.t == 0 {
            return Err(Error::Config("embedding dim and sequence length must be positive".into()));
        }
        if let Some(mim) = &config.mim {
            if mim.pool_size < 1 {
                return Err(Error::Config("interest pool size must be >= 1".into()));
            }
            if !mim.threshold.is_finite() {
                return Err(Error::Config("interest threshold must be finite".into()));
            }
        }
        if config.p_min <= 0.0 || config.p_min >= 1.0 {
            return Err(Error::Config(format!("p_min must be in (0, 1), got {}", config.p_min)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::default();
        let d = config.d;

        let mut item_tables = Vec::new();
        for (z, &v) in config.items_per_domain.iter().enumerate() {
            let mut table = Tensor::embedding_init(v + 1, d, &mut rng);
            for j in 0..d {
                table.data[j] = 0.0;
            }
            item_tables.push(store.add(&format!("item_table_{z}"), ParamGroup::Model, table, true));
        }
        let position = store.add(
            "position_table",
            ParamGroup::Model,
            Tensor::embedding_init(config.t, d, &mut rng),
            true,
        );

        let gru = match config.encoder {
            EncoderKind::Gru => {
                let mut ids = [0usize; 9];
                for (slot, gate) in ["update", "reset", "cand"].iter().enumerate() {
                    ids[slot * 3] = store.add(
                        &format!("gru_w_{gate}"),
                        ParamGroup::Model,
                        Tensor::uniform_init(d, d, &mut rng),
                        true,
                    );
                    ids[slot * 3 + 1] = store.add(
                        &format!("gru_u_{gate}"),
                        ParamGroup::Model,
                        Tensor::uniform_init(d, d, &mut rng),
                        true,
                    );
                    ids[slot * 3 + 2] = store.add(
                        &format!("gru_b_{gate}"),
                        ParamGroup::Model,
                        Tensor::zeros(vec![1, d]),
                        true,
                    );
                }
                Some(ids)
            }
            EncoderKind::PrefixMean => None,
        };

        let mim = config.mim.as_ref().map(|mc| {
            let train_sim = mc.aux_sim_weight > 0.0;
            MimIdx {
                w1: store.add("sim_w1", ParamGroup::Model, Tensor::uniform_init(d, d, &mut rng), train_sim),
                w2: store.add("sim_w2", ParamGroup::Model, Tensor::uniform_init(d, d, &mut rng), train_sim),
                w_ip: store.add("msg_w_ip", ParamGroup::Model, Tensor::uniform_init(d, d, &mut rng), true),
                w_c: store.add(
                    "fuse_w_c",
                    ParamGroup::Model,
                    Tensor::uniform_init(mc.pool_size, 1, &mut rng),
                    true,
                ),
                w_f: store.add("mix_w_f", ParamGroup::Model, Tensor::uniform_init(d, d, &mut rng), true),
            }
        });

        let h2 = (d / 2).max(1);
        let group_of = [ParamGroup::Model, ParamGroup::Imputation, ParamGroup::Propensity];
        let mut trunk = Vec::new();
        let heads: [HeadIdx; 3];
        // Head input: sequence representation, item embedding, and their
        // elementwise product. Without the product feature the stack starts
        // additive in (user, item) and rankings stay user-independent for
        // far too long at this scale.
        let input_dim = 3 * d;
        if config.shared_trunk {
            // One hidden stack feeds three scalar output layers.
            for (li, (rows, cols)) in [(input_dim, d), (d, h2)].into_iter().enumerate() {
                let w = store.add(
                    &format!("trunk_w{}", li + 1),
                    ParamGroup::Model,
                    Tensor::uniform_init(rows, cols, &mut rng),
                    true,
                );
                let b = store.add(
                    &format!("trunk_b{}", li + 1),
                    ParamGroup::Model,
                    Tensor::zeros(vec![1, cols]),
                    true,
                );
                trunk.push((w, b));
            }
            heads = std::array::from_fn(|hi| {
                let name = HEAD_NAMES[hi];
                let w = store.add(
                    &format!("{name}_out_w"),
                    group_of[hi],
                    Tensor::uniform_init(h2, 1, &mut rng),
                    true,
                );
                let b =
                    store.add(&format!("{name}_out_b"), group_of[hi], Tensor::zeros(vec![1, 1]), true);
                HeadIdx { layers: vec![(w, b)] }
            });
        } else {
            heads = std::array::from_fn(|hi| {
                let name = HEAD_NAMES[hi];
                let mut layers = Vec::new();
                for (li, (rows, cols)) in [(input_dim, d), (d, h2), (h2, 1)].into_iter().enumerate() {
                    let w = store.add(
                        &format!("{name}_w{}", li + 1),
                        group_of[hi],
                        Tensor::uniform_init(rows, cols, &mut rng),
                        true,
                    );
                    let b = store.add(
                        &format!("{name}_b{}", li + 1),
                        group_of[hi],
                        Tensor::zeros(vec![1, cols]),
                        true,
                    );
                    layers.push((w, b));
                }
                HeadIdx { layers }
            });
        }

        Ok(Model {
            config,
            params: store,
            idx: ParamIdx { item_tables, position, gru, mim, trunk, heads },
        })
    }

    /// Register every parameter on a tape. Leaf order matches the store.
    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        let leaves: Vec<Var> = self.params.iter().map(|p| tape.leaf(&p.tensor)).collect();
        let emb = self
            .idx
            .item_tables
            .iter()
            .map(|&it| EmbeddingVars {
                item_table: leaves[it],
                position_table: leaves[self.idx.position],
            })
            .collect();
        let encoder = match (&self.config.encoder, &self.idx.gru) {
            (EncoderKind::Gru, Some(ids)) => EncoderVars::Gru(GruVars {
                w_update: leaves[ids[0]],
                u_update: leaves[ids[1]],
                b_update: leaves[ids[2]],
                w_reset: leaves[ids[3]],
                u_reset: leaves[ids[4]],
                b_reset: leaves[ids[5]],
                w_cand: leaves[ids[6]],
                u_cand: leaves[ids[7]],
                b_cand: leaves[ids[8]],
            }),
            _ => EncoderVars::PrefixMean,
        };
        let mim = self.idx.mim.as_ref().map(|m| MimVars {
            w1: leaves[m.w1],
            w2: leaves[m.w2],
            w_ip: leaves[m.w_ip],
            w_c: leaves[m.w_c],
            w_f: leaves[m.w_f],
        });
        ModelVars { leaves, emb, encoder, mim }
    }

    /// Parameter indices belonging to a group, trainable ones only.
    pub fn trainable_in(&self, group: ParamGroup) -> Vec<usize> {
        (0..self.params.len())
            .filter(|&i| {
                let p = self.params.get(i);
                p.group == group && p.trainable
            })
            .collect()
    }

    /// Embed and encode one padded context row.
    pub fn encode_context(&self, tape: &mut Tape, vars: &ModelVars, domain: usize, ids: &[u32]) -> EncodedRow {
        assert_eq!(ids.len(), self.config.t, "encode_context: row must be padded to T");
        let s_prime = embed_sequence(tape, ids, &vars.emb[domain]);
        let real_len = real_length(ids);
        let enc = encode(tape, s_prime, real_len, &vars.encoder);
        let mim_view = match &self.config.mim {
            Some(mc) if mc.use_raw_embeddings => s_prime,
            _ => enc.h,
        };
        EncodedRow { h: enc.h, mim_view, real_len }
    }

    /// Project a row's grouping view by the source-side similarity
    /// transform, making it usable as a pool slot for other targets.
    pub fn prepare_source(&self, tape: &Tape, enc: &EncodedRow, own: bool) -> SourceSlot {
        let proj = match (&self.config.mim, own) {
            (Some(_), false) => {
                let w2 = &self.params.get(self.idx.mim.as_ref().unwrap().w2).tensor;
                project_real_rows(tape.value(enc.mim_view), enc.real_len, self.config.d, w2)
            }
            _ => Vec::new(),
        };
        SourceSlot { view: enc.mim_view, real_len: enc.real_len, own, proj: Rc::new(proj) }
    }

    /// Cross-domain enhanced representation for one target row.
    ///
    /// `sources` holds the pool slots in order; slot 0 is the same user's
    /// other-domain sequence when present and its flag is always 1. Other
    /// slots join the target's group when their similarity clears the
    /// threshold. Without interest groups the representation is the mean
    /// of the encoder output.
    pub fn represent(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        target: &EncodedRow,
        sources: &[Option<SourceSlot>],
    ) -> Represented {
        let Some(mim_cfg) = &self.config.mim else {
            return Represented { repr: tape.mean_rows(target.h), enhanced: None, aux_terms: Vec::new() };
        };
        let mim = vars.mim.as_ref().expect("mim vars present when configured");
        let n = mim_cfg.pool_size;
        assert_eq!(sources.len(), n, "represent: expected {n} source slots");

        let w1 = &self.params.get(self.idx.mim.as_ref().unwrap().w1).tensor;
        let d = self.config.d;
        let target_proj =
            project_real_rows(tape.value(target.mim_view), target.real_len, d, w1);

        let mut sims: Vec<Option<f64>> = Vec::with_capacity(n);
        for slot in sources {
            match slot {
                Some(s) if !s.own => {
                    sims.push(Some(similarity_from_projections(&target_proj, &s.proj, d)));
                }
                _ => sims.push(None),
            }
        }
        let mut flags = group_flags(&sims, mim_cfg.threshold);
        for (j, slot) in sources.iter().enumerate() {
            if matches!(slot, Some(s) if s.own) {
                flags[j] = 1; // the same user's own sequence always propagates
            }
        }

        let mut aux_terms = Vec::new();
        if mim_cfg.aux_sim_weight > 0.0 {
            for (j, slot) in sources.iter().enumerate() {
                if let Some(s) = slot {
                    if s.own {
                        continue;
                    }
                    if let Some(sim) = interest_similarity_var(
                        tape,
                        target.mim_view,
                        target.real_len,
                        s.view,
                        s.real_len,
                        mim.w1,
                        mim.w2,
                    ) {
                        let pushed = tape.sigmoid(sim);
                        let gap = tape.add_const(pushed, -(flags[j] as f64));
                        aux_terms.push(tape.square(gap));
                    }
                }
            }
        }

        let source_vars: Vec<Option<Var>> = sources
            .iter()
            .map(|slot| slot.as_ref().map(|s| s.view))
            .collect();
        let msgs = propagate_messages(tape, &flags, &source_vars, mim.w_ip);
        let fused = fuse_messages(tape, &msgs, mim.w_c, self.config.t, d);
        let enhanced = enhance(tape, target.h, fused, mim.w_f);
        Represented {
            repr: tape.mean_rows(enhanced.s_star),
            enhanced: Some(enhanced),
            aux_terms,
        }
    }

    /// Source slots for row `i` of a mixed batch: the reserved own slot,
    /// then the other-domain rows of the batch in order, zero-padded.
    /// `prepared` aligns with `rows` and carries each row's source form.
    pub fn batch_sources(
        &self,
        rows: &[(usize, u32, EncodedRow)],
        prepared: &[SourceSlot],
        own: Option<SourceSlot>,
        i: usize,
    ) -> Vec<Option<SourceSlot>> {
        let Some(mim_cfg) = &self.config.mim else {
            return Vec::new();
        };
        let n = mim_cfg.pool_size;
        let (domain, user, _) = rows[i];
        let mut slots = Vec::with_capacity(n);
        slots.push(own);
        for (j, &(dj, uj, _)) in rows.iter().enumerate() {
            if slots.len() >= n {
                break;
            }
            if j == i || dj == domain || uj == user {
                continue;
            }
            slots.push(Some(prepared[j].clone()));
        }
        slots.resize_with(n, || None);
        slots
    }

    /// One head forward from `mean(S*) ∥ v ∥ mean(S*)⊙v`.
    pub fn head_forward(&self, tape: &mut Tape, vars: &ModelVars, kind: HeadKind, repr: Var, item_emb: Var) -> Var {
        let cross = tape.mul(repr, item_emb);
        let pair = tape.concat_cols(repr, item_emb);
        let input = tape.concat_cols(pair, cross);
        let mut x = input;
        for &(w, b) in &self.idx.trunk {
            let z = tape.matmul(x, vars.leaves[w]);
            let z = tape.add(z, vars.leaves[b]);
            x = tape.tanh(z);
        }
        let head = &self.idx.heads[kind.index()];
        for (li, &(w, b)) in head.layers.iter().enumerate() {
            let z = tape.matmul(x, vars.leaves[w]);
            x = tape.add(z, vars.leaves[b]);
            if li + 1 < head.layers.len() {
                x = tape.tanh(x);
            }
        }
        match kind {
            HeadKind::Prediction => tape.sigmoid(x),
            HeadKind::Imputation => tape.softplus(x),
            HeadKind::Propensity => {
                let s = tape.sigmoid(x);
                tape.clamp_min(s, self.config.p_min)
            }
        }
    }

    /// Embedding row of a candidate item.
    pub fn item_embedding(&self, tape: &mut Tape, vars: &ModelVars, domain: usize, item: u32) -> Var {
        assert!(item >= 1, "item ids are 1-based; 0 is the padding id");
        tape.gather(vars.emb[domain].item_table, &[item as usize])
    }

    /// Preference score in (0,1) for a represented context and an item.
    pub fn predict_preference(&self, tape: &mut Tape, vars: &ModelVars, repr: Var, item_emb: Var) -> Var {
        self.head_forward(tape, vars, HeadKind::Prediction, repr, item_emb)
    }

    // ── checkpoints ─────────────────────────────────────────────────────

    /// Version-tagged text dump: one `tensor <name> <dims…>` line followed
    /// by one line of space-separated values per parameter. Stable across
    /// runs for identical parameter bits.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut out = String::from("cdsr-checkpoint v1\n");
        for p in self.params.iter() {
            let dims: Vec<String> = p.tensor.shape.iter().map(|d| d.to_string()).collect();
            out.push_str(&format!("tensor {} {}\n", p.name, dims.join(" ")));
            let vals: Vec<String> = p.tensor.data.iter().map(|v| format!("{v}")).collect();
            out.push_str(&vals.join(" "));
            out.push('\n');
        }
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Load a checkpoint saved by [`Model::save_checkpoint`] into this
    /// model; names and shapes must match exactly.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "cdsr-checkpoint v1")) => {}
            _ => {
                return Err(Error::Parse { line: 1, msg: "expected `cdsr-checkpoint v1`".into() })
            }
        }
        let mut loaded: BTreeMap<String, Tensor> = BTreeMap::new();
        while let Some((idx, header)) = lines.next() {
            if header.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = header.split_whitespace().collect();
            if parts.len() < 3 || parts[0] != "tensor" {
                return Err(Error::Parse { line: idx + 1, msg: format!("bad tensor header `{header}`") });
            }
            let name = parts[1].to_string();
            let shape: Vec<usize> = parts[2..]
                .iter()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse { line: idx + 1, msg: "non-integer dimension".into() })?;
            let (vidx, values_line) = lines
                .next()
                .ok_or(Error::Parse { line: idx + 2, msg: "missing values line".into() })?;
            let data: Vec<f64> = values_line
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse { line: vidx + 1, msg: "non-numeric value".into() })?;
            let numel: usize = shape.iter().product();
            if numel != data.len() {
                return Err(Error::Parse {
                    line: vidx + 1,
                    msg: format!("tensor {name}: shape {shape:?} expects {numel} values, got {}", data.len()),
                });
            }
            loaded.insert(name, Tensor::new(shape, data));
        }
        for i in 0..self.params.len() {
            let p = self.params.get_mut(i);
            let t = loaded.remove(&p.name).ok_or_else(|| {
                Error::Config(format!("checkpoint is missing tensor `{}`", p.name))
            })?;
            if t.shape != p.tensor.shape {
                return Err(Error::Config(format!(
                    "checkpoint tensor `{}` has shape {:?}, model expects {:?}",
                    p.name, t.shape, p.tensor.shape
                )));
            }
            p.tensor.data = t.data;
        }
        if let Some(extra) = loaded.keys().next() {
            return Err(Error::Config(format!("checkpoint has unknown tensor `{extra}`")));
        }
        Ok(())
    }
}

/// Parameter leaves registered on a tape, positionally aligned with the
/// model's [`ParamStore`].
pub struct ModelVars {
    pub leaves: Vec<Var>,
    pub emb: Vec<EmbeddingVars>,
    pub encoder: EncoderVars,
    pub mim: Option<MimVars>,
}

#[derive(Debug, Clone, Copy)]
pub struct MimVars {
    pub w1: Var,
    pub w2: Var,
    pub w_ip: Var,
    pub w_c: Var,
    pub w_f: Var,
}

/// Encoded context row.
#[derive(Debug, Clone, Copy)]
pub struct EncodedRow {
    /// Encoder output, `T × d`.
    pub h: Var,
    /// What grouping and propagation see: `h`, or the raw embedded
    /// sequence under the ablation switch.
    pub mim_view: Var,
    pub real_len: usize,
}

/// One source-pool slot. The projected rows are cached so a row shared by
/// many targets pays for its projection once.
#[derive(Debug, Clone)]
pub struct SourceSlot {
    pub view: Var,
    pub real_len: usize,
    /// Reserved slot holding the same user's other-domain sequence; its
    /// flag is always 1 and it needs no projection.
    pub own: bool,
    proj: Rc<Vec<f64>>,
}

/// Output of [`Model::represent`].
pub struct Represented {
    /// `1 × d` mean representation fed to the heads.
    pub repr: Var,
    pub enhanced: Option<EnhancedSequence>,
    /// Squared gaps between pushed similarities and their flags, for the
    /// auxiliary regularizer.
    pub aux_terms: Vec<Var>,
}
