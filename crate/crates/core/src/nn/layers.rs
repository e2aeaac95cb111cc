use std::sync::Arc;

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::real::Real;
use crate::error::Result;

/// `x W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<T: Real>(
        ps: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let w = ps.kaiming(format!("{name}.w"), fan_in, fan_out, rng);
        let b = bias.then(|| ps.zeros(format!("{name}.b"), 1, fan_out));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let y = g.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.add_bias(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Linear → layer norm → ReLU.
#[derive(Debug, Clone)]
pub struct Dense {
    pub linear: Linear,
}

impl Dense {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Dense { linear: Linear::new(ps, name, fan_in, fan_out, true, rng) }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var> {
        let y = self.linear.forward(g, x)?;
        Ok(activate(g, y))
    }
}

pub(crate) fn activate<T: Real>(g: &mut Graph<'_, T>, x: Var) -> Var {
    let n = g.layer_norm(x);
    g.relu(n)
}

/// First layer of a set-abstraction MLP over `[relative position, neighbor
/// feature]` rows.
///
/// The neighbor part is applied once per source point and then gathered,
/// which equals applying it to every gathered row.
#[derive(Debug, Clone)]
pub struct GroupedDense {
    pub rel: Linear,
    pub feat: Linear,
}

impl GroupedDense {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, feat_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        // Kaiming bound from the concatenated width, as if one matrix.
        let fan_in = feat_in + 3;
        let rel = Linear::new(ps, &format!("{name}.rel"), 3, fan_out, true, rng);
        let feat = Linear::new(ps, &format!("{name}.feat"), feat_in, fan_out, false, rng);
        rescale(ps, rel.w, 3, fan_in);
        rescale(ps, feat.w, feat_in, fan_in);
        GroupedDense { rel, feat }
    }

    /// `rel` holds one relative-position row per gathered neighbor.
    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, feat: Var, rel: Var, nbr: Arc<[u32]>) -> Result<Var> {
        let r = self.rel.forward(g, rel)?;
        let f = self.feat.forward(g, feat)?;
        let f = g.gather(f, nbr)?;
        let pre = g.add(r, f)?;
        Ok(activate(g, pre))
    }
}

/// First layer of an edge convolution over `[f_i, f_j − f_i]` rows, computed
/// as `gather(f (A − B), i) + gather(f B, j)` for the split weight `[A; B]`.
#[derive(Debug, Clone)]
pub struct EdgeDense {
    pub center: Linear,
    pub edge: Linear,
}

impl EdgeDense {
    pub fn new<T: Real>(ps: &mut ParamStore<T>, name: &str, feat_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let center = Linear::new(ps, &format!("{name}.center"), feat_in, fan_out, true, rng);
        let edge = Linear::new(ps, &format!("{name}.edge"), feat_in, fan_out, false, rng);
        rescale(ps, center.w, feat_in, 2 * feat_in);
        rescale(ps, edge.w, feat_in, 2 * feat_in);
        EdgeDense { center, edge }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<'_, T>, feat: Var, ctr: Arc<[u32]>, nbr: Arc<[u32]>) -> Result<Var> {
        let a = self.center.forward(g, feat)?;
        let b = self.edge.forward(g, feat)?;
        let amb = g.sub(a, b)?;
        let ci = g.gather(amb, ctr)?;
        let nj = g.gather(b, nbr)?;
        let pre = g.add(ci, nj)?;
        Ok(activate(g, pre))
    }
}

/// Rescales a Kaiming matrix drawn for `drawn_fan_in` to the bound of
/// `fan_in`.
fn rescale<T: Real>(ps: &mut ParamStore<T>, id: ParamId, drawn_fan_in: usize, fan_in: usize) {
    let s = T::from_f64_lossy((drawn_fan_in as f64 / fan_in as f64).sqrt());
    ps.value_mut(id).scale_assign(s);
}
