//! Stacked LSTM baseline.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kernels, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

use super::layers::Linear;

/// How generated steps are fed back during training: always the ground
/// truth, the model's own prediction with probability `1 - p`, or never
/// the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherForcing {
    Full,
    /// Per generated step, one batch-wide coin with this probability of
    /// feeding the truth.
    Partial(f64),
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmSpec {
    pub layers: usize,
    pub hidden_size: usize,
    pub teacher_forcing: TeacherForcing,
}

impl Default for LstmSpec {
    fn default() -> Self {
        LstmSpec {
            layers: 2,
            hidden_size: 100,
            teacher_forcing: TeacherForcing::Partial(0.5),
        }
    }
}

/// One cell's parameters. Gates pack as `[i, f, g, o]` along the columns:
/// `wx` is `[in x 4H]`, `wh` is `[H x 4H]`, `b` is `[1 x 4H]`.
#[derive(Debug)]
struct Cell {
    wx: Tensor,
    wh: Tensor,
    b: Tensor,
}

/// Stacked cells over single states, linear head from the top hidden state
/// to the next state. The window is consumed step by step, then the model
/// generates autoregressively: `input_steps + output_steps - 1` cell steps
/// per column of cells.
#[derive(Debug)]
pub struct LstmNet {
    cells: Vec<Cell>,
    head: Linear,
    hidden: usize,
}

impl LstmNet {
    /// Draw order matches [`param_names`](Self::param_names): per cell
    /// `wx` then `wh` (both Xavier over the packed gate matrix), then the
    /// head. Biases start at zero.
    pub fn init(dim: usize, spec: &LstmSpec, rng: &mut impl Rng) -> LstmNet {
        let h = spec.hidden_size;
        let mut cells = Vec::with_capacity(spec.layers);
        let mut in_dim = dim;
        for _ in 0..spec.layers {
            cells.push(Cell {
                wx: xavier_tensor(in_dim, 4 * h, rng),
                wh: xavier_tensor(h, 4 * h, rng),
                b: Tensor::zeros(1, 4 * h),
            });
            in_dim = h;
        }
        let head = Linear::xavier(h, dim, rng);
        LstmNet {
            cells,
            head,
            hidden: h,
        }
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for c in &self.cells {
            out.push(&c.wx);
            out.push(&c.wh);
            out.push(&c.b);
        }
        out.push(&self.head.w);
        out.push(&self.head.b);
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for c in &mut self.cells {
            out.push(&mut c.wx);
            out.push(&mut c.wh);
            out.push(&mut c.b);
        }
        out.push(&mut self.head.w);
        out.push(&mut self.head.b);
        out
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.cells.len() {
            out.push(format!("lstm.{i}.wx"));
            out.push(format!("lstm.{i}.wh"));
            out.push(format!("lstm.{i}.b"));
        }
        out.push("head.w".to_string());
        out.push("head.b".to_string());
        out
    }

    fn step_raw(&self, cell: &Cell, x: &Tensor, h: &Tensor, c: &Tensor) -> (Tensor, Tensor) {
        let hs = self.hidden;
        let xa = kernels::matmul(x, &cell.wx).expect("cell input width fixed at init");
        let ha = kernels::matmul(h, &cell.wh).expect("hidden width fixed at init");
        let gates = kernels::add_row(&kernels::add(&xa, &ha).expect("gate shapes agree"), &cell.b)
            .expect("bias spans gates");
        let i = kernels::sigmoid(&kernels::slice_cols(&gates, 0, hs).expect("gate slice"));
        let f = kernels::sigmoid(&kernels::slice_cols(&gates, hs, 2 * hs).expect("gate slice"));
        let g_ = kernels::tanh(&kernels::slice_cols(&gates, 2 * hs, 3 * hs).expect("gate slice"));
        let o = kernels::sigmoid(&kernels::slice_cols(&gates, 3 * hs, 4 * hs).expect("gate slice"));
        let c_next = kernels::add(
            &kernels::mul(&f, c).expect("state shapes agree"),
            &kernels::mul(&i, &g_).expect("state shapes agree"),
        )
        .expect("state shapes agree");
        let h_next = kernels::mul(&o, &kernels::tanh(&c_next)).expect("state shapes agree");
        (h_next, c_next)
    }

    /// Feeds one state through the stack, updating every cell's `(h, c)`.
    /// Returns the top hidden state.
    fn stack_raw(&self, x: &Tensor, states: &mut [(Tensor, Tensor)]) -> Tensor {
        let mut input = x.clone();
        for (cell, (h, c)) in self.cells.iter().zip(states.iter_mut()) {
            let (h2, c2) = self.step_raw(cell, &input, h, c);
            input = h2.clone();
            *h = h2;
            *c = c2;
        }
        input
    }

    /// Autoregressive forecast without a teacher.
    pub fn predict(
        &self,
        windows: &Tensor,
        input_steps: usize,
        output_steps: usize,
        dim: usize,
    ) -> Result<Tensor> {
        let n = windows.rows();
        if windows.cols() != input_steps * dim {
            return Err(Error::shape(
                "lstm",
                format!(
                    "window matrix has {} columns, expected {}",
                    windows.cols(),
                    input_steps * dim
                ),
            ));
        }
        let mut states: Vec<(Tensor, Tensor)> = (0..self.cells.len())
            .map(|_| (Tensor::zeros(n, self.hidden), Tensor::zeros(n, self.hidden)))
            .collect();
        let mut top = Tensor::zeros(n, self.hidden);
        for t in 0..input_steps {
            let xt = kernels::slice_cols(windows, t * dim, (t + 1) * dim)?;
            top = self.stack_raw(&xt, &mut states);
        }
        let mut y = self.head.apply(&top);
        let mut out = y.clone();
        for _ in 1..output_steps {
            let top = self.stack_raw(&y, &mut states);
            y = self.head.apply(&top);
            out = kernels::concat_cols(&out, &y)?;
        }
        Ok(out)
    }

    fn step_graph(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        cell: usize,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let hs = self.hidden;
        let (wx, wh, b) = (ids[3 * cell], ids[3 * cell + 1], ids[3 * cell + 2]);
        let xa = g.matmul(x, wx)?;
        let ha = g.matmul(h, wh)?;
        let pre = g.add(xa, ha)?;
        let gates = g.add_row(pre, b)?;
        let i_ = g.slice_cols(gates, 0, hs)?;
        let i = g.sigmoid(i_);
        let f_ = g.slice_cols(gates, hs, 2 * hs)?;
        let f = g.sigmoid(f_);
        let gg_ = g.slice_cols(gates, 2 * hs, 3 * hs)?;
        let gg = g.tanh(gg_);
        let o_ = g.slice_cols(gates, 3 * hs, 4 * hs)?;
        let o = g.sigmoid(o_);
        let fc = g.mul(f, c)?;
        let ig = g.mul(i, gg)?;
        let c_next = g.add(fc, ig)?;
        let ct = g.tanh(c_next);
        let h_next = g.mul(o, ct)?;
        Ok((h_next, c_next))
    }

    fn stack_graph(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        x: NodeId,
        states: &mut [(NodeId, NodeId)],
    ) -> Result<NodeId> {
        let mut input = x;
        for cell in 0..self.cells.len() {
            let (h, c) = states[cell];
            let (h2, c2) = self.step_graph(g, ids, cell, input, h, c)?;
            states[cell] = (h2, c2);
            input = h2;
        }
        Ok(input)
    }

    /// Tape forward. A teacher sequence comes with one coin per generated
    /// step after the first; a `true` coin feeds the ground-truth step
    /// instead of the model's own prediction.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_graph(
        &self,
        g: &mut Graph,
        ids: &[NodeId],
        x: NodeId,
        input_steps: usize,
        output_steps: usize,
        dim: usize,
        teacher: Option<&Tensor>,
        coins: Option<&[bool]>,
    ) -> Result<super::ForwardOut> {
        let n = g.value(x).rows();
        let (head_w, head_b) = (ids[ids.len() - 2], ids[ids.len() - 1]);

        let teacher_node = match (teacher, coins) {
            (None, None) => None,
            (Some(t), Some(coins)) => {
                if t.rows() != n || t.cols() != output_steps * dim {
                    return Err(Error::shape(
                        "teacher",
                        format!(
                            "teacher is {}, expected {}x{}",
                            t.shape_string(),
                            n,
                            output_steps * dim
                        ),
                    ));
                }
                if coins.len() != output_steps.saturating_sub(1) {
                    return Err(Error::shape(
                        "teacher",
                        format!(
                            "{} coins for {} generated steps after the first",
                            coins.len(),
                            output_steps.saturating_sub(1)
                        ),
                    ));
                }
                Some(g.constant(t.clone()))
            }
            _ => {
                return Err(Error::config(
                    "teacher sequence and coins come together or not at all".to_string(),
                ));
            }
        };

        let zero = g.constant(Tensor::zeros(n, self.hidden));
        let mut states: Vec<(NodeId, NodeId)> =
            (0..self.cells.len()).map(|_| (zero, zero)).collect();
        let mut top = zero;
        for t in 0..input_steps {
            let xt = g.slice_cols(x, t * dim, (t + 1) * dim)?;
            top = self.stack_graph(g, ids, xt, &mut states)?;
        }
        let hw = g.matmul(top, head_w)?;
        let mut y = g.add_row(hw, head_b)?;
        let mut out = y;
        for j in 1..output_steps {
            let feed = match (teacher_node, coins) {
                (Some(tn), Some(coins)) if coins[j - 1] => {
                    g.slice_cols(tn, (j - 1) * dim, j * dim)?
                }
                _ => y,
            };
            let top = self.stack_graph(g, ids, feed, &mut states)?;
            let hw = g.matmul(top, head_w)?;
            y = g.add_row(hw, head_b)?;
            out = g.concat_cols(out, y)?;
        }
        Ok(super::ForwardOut {
            prediction: out,
            latent: None,
        })
    }
}

fn xavier_tensor(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let mut t = Tensor::zeros(fan_in, fan_out);
    for v in t.data_mut() {
        *v = rng.random_range(-bound..bound);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> LstmNet {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = LstmSpec {
            layers: 2,
            hidden_size: 7,
            teacher_forcing: TeacherForcing::None,
        };
        LstmNet::init(2, &spec, &mut rng)
    }

    fn window(n: usize, steps: usize, dim: usize) -> Tensor {
        let data = (0..n * steps * dim)
            .map(|i| (i as f64 * 0.13).sin() * 0.5)
            .collect();
        Tensor::from_vec(n, steps * dim, data).unwrap()
    }

    #[test]
    fn graph_forward_matches_raw_prediction() {
        let net = net();
        let x = window(3, 5, 2);
        let raw = net.predict(&x, 5, 4, 2).unwrap();
        assert_eq!((raw.rows(), raw.cols()), (3, 8));

        let mut g = Graph::new();
        let ids: Vec<NodeId> = net
            .param_tensors()
            .into_iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let ix = g.constant(x);
        let out = net
            .forward_graph(&mut g, &ids, ix, 5, 4, 2, None, None)
            .unwrap();
        assert_eq!(g.value(out.prediction).data(), raw.data());
        assert!(out.latent.is_none());
    }

    #[test]
    fn all_true_coins_reproduce_full_teacher_forcing() {
        let net = net();
        let x = window(2, 5, 2);
        let teacher = window(2, 3, 2);

        // With every coin true, generated steps after the first see only
        // teacher inputs, so predictions for steps 2.. depend on the
        // teacher, not on the model's own first prediction.
        let mut g = Graph::new();
        let ids: Vec<NodeId> = net
            .param_tensors()
            .into_iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let ix = g.constant(x.clone());
        let forced = net
            .forward_graph(&mut g, &ids, ix, 5, 3, 2, Some(&teacher), Some(&[true, true]))
            .unwrap();
        let forced = g.value(forced.prediction).clone();

        let mut g = Graph::new();
        let ids: Vec<NodeId> = net
            .param_tensors()
            .into_iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let ix = g.constant(x);
        let free = net
            .forward_graph(&mut g, &ids, ix, 5, 3, 2, Some(&teacher), Some(&[false, false]))
            .unwrap();
        let free = g.value(free.prediction).clone();

        // The first generated step sees no feedback, so it agrees bitwise
        // in every row; later steps diverge.
        let dim = 2;
        for r in 0..2 {
            let at = r * 3 * dim;
            assert_eq!(&forced.data()[at..at + dim], &free.data()[at..at + dim]);
        }
        assert_ne!(forced.data(), free.data());
    }

    #[test]
    fn teacher_without_coins_is_rejected() {
        let net = net();
        let x = window(1, 5, 2);
        let teacher = window(1, 3, 2);
        let mut g = Graph::new();
        let ids: Vec<NodeId> = net
            .param_tensors()
            .into_iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let ix = g.constant(x);
        assert!(net
            .forward_graph(&mut g, &ids, ix, 5, 3, 2, Some(&teacher), None)
            .is_err());
    }

    #[test]
    fn coin_count_must_match_generated_steps() {
        let net = net();
        let x = window(1, 5, 2);
        let teacher = window(1, 3, 2);
        let mut g = Graph::new();
        let ids: Vec<NodeId> = net
            .param_tensors()
            .into_iter()
            .map(|t| g.constant(t.clone()))
            .collect();
        let ix = g.constant(x);
        assert!(net
            .forward_graph(&mut g, &ids, ix, 5, 3, 2, Some(&teacher), Some(&[true]))
            .is_err());
    }
}
