//! Classifier backbones: a small inception-style CNN and a patch-embedding
//! transformer. Both end in global average pooling over a spatial map, a
//! feature vector, and a 6-way linear head, so the interpretability hooks
//! (penultimate features, last spatial maps) are uniform.

use rand_chacha::ChaCha20Rng;

use crate::nn::{Conv2d, Graph, LayerNorm, Linear, ParamStore, Var};

use super::ClassifierConfig;

#[derive(Debug, Clone, Copy)]
pub struct IdSpan {
    pub start: usize,
    pub end: usize,
}

impl IdSpan {
    pub fn contains(&self, raw: usize) -> bool {
        raw >= self.start && raw < self.end
    }
}

fn span<T>(store: &mut ParamStore, build: impl FnOnce(&mut ParamStore) -> T) -> (T, IdSpan) {
    let start = store.len();
    let out = build(store);
    (
        out,
        IdSpan {
            start,
            end: store.len(),
        },
    )
}

/// Outputs of one backbone pass.
pub struct NetParts {
    /// Last spatial activation maps `(N, C, h, w)`; the Grad-CAM target.
    pub maps: Var,
    /// Penultimate feature vectors `(N, C)`.
    pub features: Var,
    /// Class logits `(N, 6)`.
    pub logits: Var,
}

struct InceptionBlock {
    b1: Conv2d,
    b2a: Conv2d,
    b2b: Conv2d,
    b3a: Conv2d,
    b3b: Conv2d,
    b3c: Conv2d,
    b4: Conv2d,
}

impl InceptionBlock {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
    ) -> Self {
        assert_eq!(out_c % 8, 0, "inception width must be divisible by 8");
        let q = out_c / 8;
        InceptionBlock {
            b1: Conv2d::new(store, rng, &format!("{name}.b1"), in_c, 2 * q, 1, 1, 0, true),
            b2a: Conv2d::new(store, rng, &format!("{name}.b2a"), in_c, 2 * q, 1, 1, 0, true),
            b2b: Conv2d::new(store, rng, &format!("{name}.b2b"), 2 * q, 3 * q, 3, 1, 1, true),
            b3a: Conv2d::new(store, rng, &format!("{name}.b3a"), in_c, q, 1, 1, 0, true),
            b3b: Conv2d::new(store, rng, &format!("{name}.b3b"), q, 2 * q, 3, 1, 1, true),
            b3c: Conv2d::new(store, rng, &format!("{name}.b3c"), 2 * q, 2 * q, 3, 1, 1, true),
            b4: Conv2d::new(store, rng, &format!("{name}.b4"), in_c, q, 1, 1, 0, true),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let p1 = self.b1.forward(g, x);
        let p1 = g.tape.relu(p1);
        let p2 = self.b2a.forward(g, x);
        let p2 = g.tape.relu(p2);
        let p2 = self.b2b.forward(g, p2);
        let p2 = g.tape.relu(p2);
        let p3 = self.b3a.forward(g, x);
        let p3 = g.tape.relu(p3);
        let p3 = self.b3b.forward(g, p3);
        let p3 = g.tape.relu(p3);
        let p3 = self.b3c.forward(g, p3);
        let p3 = g.tape.relu(p3);
        let pooled = g.tape.avg_pool2d(x, 3, 1, 1);
        let p4 = self.b4.forward(g, pooled);
        let p4 = g.tape.relu(p4);
        g.tape.concat_chan(&[p1, p2, p3, p4])
    }
}

/// Inception-style CNN: stem, alternating pool/inception stages down to an
/// 8x8 map, global average pooling, linear head.
pub struct InceptionNet {
    stem: Conv2d,
    blocks: Vec<InceptionBlock>,
    head: Linear,
    feature_dim: usize,
    backbone_span: IdSpan,
    last_block_span: IdSpan,
    head_span: IdSpan,
}

/// Stage widths: width doubles per stage, capped at 4x.
fn inception_stage_channels(width: usize, stages: usize) -> Vec<usize> {
    (0..stages)
        .map(|i| width * (1 << (i + 1).min(2)))
        .collect()
}

impl InceptionNet {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        cfg: &ClassifierConfig,
    ) -> Self {
        let w = cfg.width;
        // pool/inception stages until the map is 8x8
        let stages = (cfg.input_size / 8).ilog2() as usize;
        let chans = inception_stage_channels(w, stages);
        let feature_dim = *chans.last().unwrap();

        let backbone_start = store.len();
        let stem = Conv2d::new(store, rng, "stem", 3, w, 3, 1, 1, true);
        let mut blocks = Vec::new();
        let mut last_span = IdSpan {
            start: store.len(),
            end: store.len(),
        };
        let mut in_c = w;
        for (i, &out_c) in chans.iter().enumerate() {
            let (block, sp) = span(store, |s| {
                InceptionBlock::new(s, rng, &format!("incep{i}"), in_c, out_c)
            });
            blocks.push(block);
            last_span = sp;
            in_c = out_c;
        }
        let backbone_span = IdSpan {
            start: backbone_start,
            end: store.len(),
        };
        let (head, head_span) = span(store, |s| Linear::new(s, rng, "head", feature_dim, 6));

        InceptionNet {
            stem,
            blocks,
            head,
            feature_dim,
            backbone_span,
            last_block_span: last_span,
            head_span,
        }
    }

    pub fn forward_parts(&self, g: &mut Graph, x: Var) -> NetParts {
        let mut h = self.stem.forward(g, x);
        h = g.tape.relu(h);
        for block in &self.blocks {
            h = g.tape.avg_pool2d(h, 2, 2, 0);
            h = block.forward(g, h);
        }
        let maps = h;
        let features = g.tape.global_avg_pool(maps);
        let logits = self.head.forward(g, features);
        NetParts {
            maps,
            features,
            logits,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn spans(&self) -> (IdSpan, IdSpan, IdSpan) {
        (self.backbone_span, self.last_block_span, self.head_span)
    }
}

struct VitBlock {
    ln1: LayerNorm,
    q: Linear,
    k: Linear,
    v: Linear,
    proj: Linear,
    ln2: LayerNorm,
    fc1: Linear,
    fc2: Linear,
    heads: usize,
}

impl VitBlock {
    fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_dim: usize,
    ) -> Self {
        VitBlock {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), dim),
            q: Linear::new(store, rng, &format!("{name}.q"), dim, dim),
            k: Linear::new(store, rng, &format!("{name}.k"), dim, dim),
            v: Linear::new(store, rng, &format!("{name}.v"), dim, dim),
            proj: Linear::new(store, rng, &format!("{name}.proj"), dim, dim),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), dim),
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), dim, mlp_dim),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), mlp_dim, dim),
            heads,
        }
    }

    /// `x: (N, T, D)`.
    fn forward(&self, g: &mut Graph, x: Var, n: usize, t: usize, d: usize) -> Var {
        let h = self.heads;
        let dh = d / h;
        let scale = 1.0 / (dh as f32).sqrt();

        let normed = self.ln1.forward(g, x);
        let flat = g.tape.reshape(normed, &[n * t, d]);
        let split = |g: &mut Graph, lin: &Linear, flat: Var| -> Var {
            let y = lin.forward(g, flat); // (N*T, D)
            let y = g.tape.reshape(y, &[n, t, h, dh]);
            let y = g.tape.permute(y, &[0, 2, 1, 3]); // (N, h, T, dh)
            g.tape.reshape(y, &[n * h, t, dh])
        };
        let q = split(g, &self.q, flat);
        let k = split(g, &self.k, flat);
        let v = split(g, &self.v, flat);

        let kt = g.tape.permute(k, &[0, 2, 1]); // (N*h, dh, T)
        let scores = g.tape.batch_matmul(q, kt);
        let scores = g.tape.scale(scores, scale);
        let attn = g.tape.softmax_last(scores);
        let ctx = g.tape.batch_matmul(attn, v); // (N*h, T, dh)
        let ctx = g.tape.reshape(ctx, &[n, h, t, dh]);
        let ctx = g.tape.permute(ctx, &[0, 2, 1, 3]); // (N, T, h, dh)
        let ctx = g.tape.reshape(ctx, &[n * t, d]);
        let proj = self.proj.forward(g, ctx);
        let proj = g.tape.reshape(proj, &[n, t, d]);
        let x = g.tape.add(x, proj);

        let normed2 = self.ln2.forward(g, x);
        let flat2 = g.tape.reshape(normed2, &[n * t, d]);
        let m = self.fc1.forward(g, flat2);
        let m = g.tape.relu(m);
        let m = self.fc2.forward(g, m);
        let m = g.tape.reshape(m, &[n, t, d]);
        g.tape.add(x, m)
    }
}

/// Small ViT: 4-pixel patches, learned position embedding, pre-norm blocks,
/// mean-pooled tokens. The final token grid doubles as the spatial map for
/// Grad-CAM.
pub struct TinyViT {
    patch: Conv2d,
    pos: crate::nn::ParamId,
    blocks: Vec<VitBlock>,
    final_ln: LayerNorm,
    head: Linear,
    dim: usize,
    grid: usize,
    backbone_span: IdSpan,
    last_block_span: IdSpan,
    head_span: IdSpan,
}

impl TinyViT {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        cfg: &ClassifierConfig,
    ) -> Self {
        let patch_size = 4usize;
        let grid = cfg.input_size / patch_size;
        let t = grid * grid;
        let dim = (cfg.width * 2).max(16);
        let heads = 4;
        let dim = dim.div_ceil(heads) * heads;
        let n_blocks = 2;

        let backbone_start = store.len();
        let patch = Conv2d::new(store, rng, "patch", 3, dim, patch_size, patch_size, 0, true);
        let pos = store.normal(rng, "pos", &[t, dim], 0.02);
        let mut blocks = Vec::new();
        let mut last_span = IdSpan {
            start: store.len(),
            end: store.len(),
        };
        for i in 0..n_blocks {
            let (block, sp) = span(store, |s| {
                VitBlock::new(s, rng, &format!("block{i}"), dim, heads, dim * 2)
            });
            blocks.push(block);
            last_span = sp;
        }
        let final_ln = LayerNorm::new(store, "final_ln", dim);
        last_span.end = store.len(); // final norm belongs to the last block scope
        let backbone_span = IdSpan {
            start: backbone_start,
            end: store.len(),
        };
        let (head, head_span) = span(store, |s| Linear::new(s, rng, "head", dim, 6));

        TinyViT {
            patch,
            pos,
            blocks,
            final_ln,
            head,
            dim,
            grid,
            backbone_span,
            last_block_span: last_span,
            head_span,
        }
    }

    pub fn forward_parts(&self, g: &mut Graph, x: Var) -> NetParts {
        let n = g.tape.value(x).shape()[0];
        let t = self.grid * self.grid;
        let d = self.dim;

        let emb = self.patch.forward(g, x); // (N, D, grid, grid)
        let emb = g.tape.reshape(emb, &[n, d, t]);
        let mut tokens = g.tape.permute(emb, &[0, 2, 1]); // (N, T, D)
        let pos = g.param(self.pos);
        tokens = g.tape.add_tokens(tokens, pos);
        for block in &self.blocks {
            tokens = block.forward(g, tokens, n, t, d);
        }
        let tokens = self.final_ln.forward(g, tokens); // (N, T, D)

        // token grid as a spatial map (N, D, grid, grid)
        let chan_first = g.tape.permute(tokens, &[0, 2, 1]);
        let maps = g.tape.reshape(chan_first, &[n, d, self.grid, self.grid]);
        let features = g.tape.global_avg_pool(maps);
        let logits = self.head.forward(g, features);
        NetParts {
            maps,
            features,
            logits,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.dim
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn spans(&self) -> (IdSpan, IdSpan, IdSpan) {
        (self.backbone_span, self.last_block_span, self.head_span)
    }
}

pub enum BackboneNet {
    Inception(InceptionNet),
    Vit(TinyViT),
}

impl BackboneNet {
    pub fn forward_parts(&self, g: &mut Graph, x: Var) -> NetParts {
        match self {
            BackboneNet::Inception(net) => net.forward_parts(g, x),
            BackboneNet::Vit(net) => net.forward_parts(g, x),
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            BackboneNet::Inception(net) => net.feature_dim(),
            BackboneNet::Vit(net) => net.feature_dim(),
        }
    }

    pub fn head(&self) -> &Linear {
        match self {
            BackboneNet::Inception(net) => net.head(),
            BackboneNet::Vit(net) => net.head(),
        }
    }

    /// (backbone, last block, head) parameter-id spans.
    pub fn spans(&self) -> (IdSpan, IdSpan, IdSpan) {
        match self {
            BackboneNet::Inception(net) => net.spans(),
            BackboneNet::Vit(net) => net.spans(),
        }
    }
}
