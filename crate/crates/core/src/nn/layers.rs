//! Layer structs: thin bundles of parameter ids with a forward method.

use rand_chacha::ChaCha20Rng;

use super::params::{Graph, ParamId, ParamStore};
use super::tape::Var;

#[derive(Debug, Clone, Copy)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        name: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    ) -> Self {
        let w = store.conv_init(rng, &format!("{name}.w"), out_c, in_c, k);
        let b = bias.then(|| store.zeros(&format!("{name}.b"), &[out_c]));
        Conv2d { w, b, stride, pad }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let mut out = g.tape.conv2d(x, w, self.stride, self.pad);
        if let Some(bid) = self.b {
            let b = g.param(bid);
            out = g.tape.add_bias_chan(out, b);
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        name: &str,
        in_d: usize,
        out_d: usize,
    ) -> Self {
        let w = store.linear_init(rng, &format!("{name}.w"), in_d, out_d);
        let b = store.zeros(&format!("{name}.b"), &[out_d]);
        Linear { w, b }
    }

    /// `x: (M, in) -> (M, out)`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let prod = g.tape.matmul(x, w);
        g.tape.add_bias_row(prod, b)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f32,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        LayerNorm {
            gamma: store.ones(&format!("{name}.gamma"), &[d]),
            beta: store.zeros(&format!("{name}.beta"), &[d]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.tape.layer_norm(x, gamma, beta, self.eps)
    }
}

/// Two-layer projection head used by the contrastive feature path.
#[derive(Debug, Clone, Copy)]
pub struct Mlp2 {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha20Rng,
        name: &str,
        in_d: usize,
        hidden: usize,
        out_d: usize,
    ) -> Self {
        Mlp2 {
            fc1: Linear::new(store, rng, &format!("{name}.fc1"), in_d, hidden),
            fc2: Linear::new(store, rng, &format!("{name}.fc2"), hidden, out_d),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.fc1.forward(g, x);
        let h = g.tape.relu(h);
        self.fc2.forward(g, h)
    }
}
