//! Encoder-decoder generator with residual bottleneck and a patch-level
//! discriminator, both width/depth-scaled from [`GanConfig`](super::GanConfig).

use rand_chacha::ChaCha20Rng;

use crate::nn::{Conv2d, Graph, Mlp2, ParamId, ParamStore, Var};

use super::GanConfig;

const NORM_EPS: f32 = 1e-5;

/// Contiguous parameter-id range of one network inside a shared store.
#[derive(Debug, Clone, Copy)]
pub struct IdRange {
    start: usize,
    end: usize,
}

impl IdRange {
    pub fn contains(&self, id: ParamId) -> bool {
        id.raw() >= self.start && id.raw() < self.end
    }
}

pub fn track_range<T>(store: &mut ParamStore, build: impl FnOnce(&mut ParamStore) -> T) -> (T, IdRange) {
    let start = store.len();
    let out = build(store);
    (
        out,
        IdRange {
            start,
            end: store.len(),
        },
    )
}

struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    fn new(store: &mut ParamStore, rng: &mut ChaCha20Rng, name: &str, c: usize) -> Self {
        ResBlock {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), c, c, 3, 1, 1, true),
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), c, c, 3, 1, 1, true),
        }
    }

    fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.conv1.forward(g, x);
        let h = g.tape.instance_norm(h, NORM_EPS);
        let h = g.tape.relu(h);
        let h = self.conv2.forward(g, h);
        let h = g.tape.instance_norm(h, NORM_EPS);
        g.tape.add(x, h)
    }
}

/// Image-to-image map: stem, strided downsampling, residual bottleneck,
/// nearest-neighbor upsampling, tanh output. Encoder taps feed the
/// contrastive path.
pub struct ResnetGenerator {
    stem: Conv2d,
    downs: Vec<Conv2d>,
    res: Vec<ResBlock>,
    ups: Vec<Conv2d>,
    out: Conv2d,
}

/// Channel widths of the encoder taps, outermost first.
pub fn generator_feature_channels(cfg: &GanConfig) -> Vec<usize> {
    let mut chans = vec![cfg.base_channels];
    for i in 0..cfg.n_downsample {
        chans.push(cfg.base_channels << (i + 1));
    }
    // last residual block output
    chans.push(cfg.base_channels << cfg.n_downsample);
    chans
}

impl ResnetGenerator {
    pub fn build(store: &mut ParamStore, rng: &mut ChaCha20Rng, name: &str, cfg: &GanConfig) -> Self {
        let c = cfg.base_channels;
        let stem = Conv2d::new(store, rng, &format!("{name}.stem"), 3, c, 3, 1, 1, true);
        let mut downs = Vec::new();
        for i in 0..cfg.n_downsample {
            let cin = c << i;
            downs.push(Conv2d::new(
                store,
                rng,
                &format!("{name}.down{i}"),
                cin,
                cin * 2,
                3,
                2,
                1,
                true,
            ));
        }
        let top = c << cfg.n_downsample;
        let res = (0..cfg.n_res_blocks)
            .map(|i| ResBlock::new(store, rng, &format!("{name}.res{i}"), top))
            .collect();
        let mut ups = Vec::new();
        for i in (0..cfg.n_downsample).rev() {
            let cin = c << (i + 1);
            ups.push(Conv2d::new(
                store,
                rng,
                &format!("{name}.up{i}"),
                cin,
                cin / 2,
                3,
                1,
                1,
                true,
            ));
        }
        let out = Conv2d::new(store, rng, &format!("{name}.out"), c, 3, 3, 1, 1, true);
        ResnetGenerator {
            stem,
            downs,
            res,
            ups,
            out,
        }
    }

    /// Encoder pass only; returns the tap activations.
    pub fn encode(&self, g: &mut Graph, x: Var) -> Vec<Var> {
        let mut taps = Vec::new();
        let mut h = self.stem.forward(g, x);
        h = g.tape.instance_norm(h, NORM_EPS);
        h = g.tape.relu(h);
        taps.push(h);
        for down in &self.downs {
            h = down.forward(g, h);
            h = g.tape.instance_norm(h, NORM_EPS);
            h = g.tape.relu(h);
            taps.push(h);
        }
        for block in &self.res {
            h = block.forward(g, h);
        }
        taps.push(h);
        taps
    }

    fn decode(&self, g: &mut Graph, bottleneck: Var) -> Var {
        let mut h = bottleneck;
        for up in &self.ups {
            h = g.tape.upsample_nearest2(h);
            h = up.forward(g, h);
            h = g.tape.instance_norm(h, NORM_EPS);
            h = g.tape.relu(h);
        }
        let h = self.out.forward(g, h);
        g.tape.tanh(h)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let taps = self.encode(g, x);
        self.decode(g, *taps.last().unwrap())
    }

    /// Full pass plus the encoder taps of the input.
    pub fn forward_with_features(&self, g: &mut Graph, x: Var) -> (Var, Vec<Var>) {
        let taps = self.encode(g, x);
        let y = self.decode(g, *taps.last().unwrap());
        (y, taps)
    }
}

/// Patch-level real/fake scorer; emits a grid of logits.
pub struct PatchDiscriminator {
    conv1: Conv2d,
    conv2: Conv2d,
    out: Conv2d,
}

impl PatchDiscriminator {
    pub fn build(store: &mut ParamStore, rng: &mut ChaCha20Rng, name: &str, cfg: &GanConfig) -> Self {
        let c = cfg.base_channels;
        PatchDiscriminator {
            conv1: Conv2d::new(store, rng, &format!("{name}.conv1"), 3, c, 3, 2, 1, true),
            conv2: Conv2d::new(store, rng, &format!("{name}.conv2"), c, c * 2, 3, 2, 1, true),
            out: Conv2d::new(store, rng, &format!("{name}.out"), c * 2, 1, 3, 1, 1, true),
        }
    }

    /// Patch logits `(N, 1, H', W')`.
    pub fn logits(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.conv1.forward(g, x);
        let h = g.tape.leaky_relu(h, 0.2);
        let h = self.conv2.forward(g, h);
        let h = g.tape.instance_norm(h, NORM_EPS);
        let h = g.tape.leaky_relu(h, 0.2);
        self.out.forward(g, h)
    }
}

/// Per-tap projection heads for the contrastive path.
pub struct FeatureHeads {
    pub mlps: Vec<Mlp2>,
    pub proj_dim: usize,
}

impl FeatureHeads {
    pub fn build(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        name: &str,
        cfg: &GanConfig,
    ) -> Self {
        let proj_dim = (cfg.base_channels * 2).max(16);
        let mlps = generator_feature_channels(cfg)
            .into_iter()
            .enumerate()
            .map(|(i, c)| Mlp2::new(store, rng, &format!("{name}.head{i}"), c, proj_dim, proj_dim))
            .collect();
        FeatureHeads { mlps, proj_dim }
    }
}
