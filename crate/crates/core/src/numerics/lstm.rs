use rand::Rng;

use super::{Graph, NodeId, NumericsError, ParamId, ParamStore};
use crate::scalar::Scalar;

/// Single-layer LSTM cell with fused gate weights, gate order `i, f, g, o`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    w_x: ParamId,
    w_h: ParamId,
    bias: ParamId,
}

impl LstmCell {
    /// Registers `{prefix}.w_x`, `{prefix}.w_h`, `{prefix}.b`. Forget-gate bias
    /// starts at 1.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input: usize,
        hidden: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Self {
        let w_x = store.insert_uniform(format!("{prefix}.w_x"), &[input, 4 * hidden], init_scale, rng);
        let w_h = store.insert_uniform(format!("{prefix}.w_h"), &[hidden, 4 * hidden], init_scale, rng);
        let bias = store.insert_zeros(format!("{prefix}.b"), &[1, 4 * hidden]);
        store.get_mut(bias).data_mut()[hidden..2 * hidden].fill(T::one());
        Self {
            input,
            hidden,
            w_x,
            w_h,
            bias,
        }
    }

    /// Rebinds a cell to parameters already present in `store` (checkpoint load).
    pub fn bind<T: Scalar>(store: &ParamStore<T>, prefix: &str) -> Option<Self> {
        let w_x = store.id(&format!("{prefix}.w_x"))?;
        let w_h = store.id(&format!("{prefix}.w_h"))?;
        let bias = store.id(&format!("{prefix}.b"))?;
        let (input, four_h) = store.get(w_x).dims2();
        Some(Self {
            input,
            hidden: four_h / 4,
            w_x,
            w_h,
            bias,
        })
    }

    /// One step over a batch: `x` is `B×input`, `h`/`c` are `B×hidden`.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId), NumericsError> {
        let w_x = g.param(store, self.w_x);
        let w_h = g.param(store, self.w_h);
        let b = g.param(store, self.bias);
        let xw = g.matmul(x, w_x)?;
        let hw = g.matmul(h, w_h)?;
        let pre = g.add(xw, hw)?;
        let gates = g.add_row(pre, b)?;
        let hd = self.hidden;
        let i = g.slice_cols(gates, 0, hd)?;
        let f = g.slice_cols(gates, hd, hd)?;
        let cand = g.slice_cols(gates, 2 * hd, hd)?;
        let o = g.slice_cols(gates, 3 * hd, hd)?;
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let cand = g.tanh(cand);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c)?;
        let ig = g.mul(i, cand)?;
        let c_next = g.add(fc, ig)?;
        let tc = g.tanh(c_next);
        let h_next = g.mul(o, tc)?;
        Ok((h_next, c_next))
    }
}
