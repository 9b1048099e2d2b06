//! Stacked bidirectional GRU classifier.

use rand::Rng;

use super::layers::Linear;
use crate::autodiff::{Group, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Weights of one GRU direction.
///
/// `w_x` maps the input to the update, reset and candidate pre-activations
/// (in that order along the output axis), `w_h` maps the state to the update
/// and reset pre-activations, and `u_n` maps the reset-gated state into the
/// candidate.
#[derive(Clone, Debug)]
pub struct GruCell {
    w_x: ParamId,
    w_h: ParamId,
    u_n: ParamId,
    b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// A cell whose parameters have been placed on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundGruCell {
    w_x: Var,
    w_h: Var,
    u_n: Var,
    b: Var,
    input: usize,
    hidden: usize,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        group: Group,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let h3 = 3 * hidden;
        GruCell {
            w_x: store.add(
                format!("{name}.w_x"),
                Tensor::uniform(&[input, h3], bound, rng),
                group,
            ),
            w_h: store.add(
                format!("{name}.w_h"),
                Tensor::uniform(&[hidden, 2 * hidden], bound, rng),
                group,
            ),
            u_n: store.add(
                format!("{name}.u_n"),
                Tensor::uniform(&[hidden, hidden], bound, rng),
                group,
            ),
            b: store.add(format!("{name}.bias"), Tensor::zeros(&[h3]), group),
            input,
            hidden,
        }
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> BoundGruCell {
        BoundGruCell {
            w_x: tape.param(store, self.w_x),
            w_h: tape.param(store, self.w_h),
            u_n: tape.param(store, self.u_n),
            b: tape.param(store, self.b),
            input: self.input,
            hidden: self.hidden,
        }
    }
}

/// One GRU update for a batch: `x` is `[B, input]`, `h` is `[B, hidden]`.
///
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_n x + U_n (r ⊙ h) + b_n)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_cell_step(tape: &mut Tape, cell: &BoundGruCell, x: Var, h: Var) -> Result<Var> {
    let (sx, sh) = (tape.shape(x).to_vec(), tape.shape(h).to_vec());
    if sx.len() != 2 || sh.len() != 2 || sx[1] != cell.input || sh[1] != cell.hidden || sx[0] != sh[0] {
        return Err(Error::dim("gru_cell_step", &sx, &sh));
    }
    let hid = cell.hidden;
    let xp = tape.linear(x, cell.w_x, Some(cell.b))?;
    let hp = tape.matmul(h, cell.w_h)?;
    let x_zr = tape.narrow(xp, 1, 0, 2 * hid)?;
    let zr = tape.add(x_zr, hp)?;
    let zr = tape.sigmoid(zr);
    let z = tape.narrow(zr, 1, 0, hid)?;
    let r = tape.narrow(zr, 1, hid, hid)?;
    let x_n = tape.narrow(xp, 1, 2 * hid, hid)?;
    let rh = tape.mul(r, h)?;
    let u = tape.matmul(rh, cell.u_n)?;
    let n = tape.add(x_n, u)?;
    let n = tape.tanh(n);
    let keep = tape.one_minus(z);
    let old = tape.mul(keep, h)?;
    let new = tape.mul(z, n)?;
    tape.add(old, new)
}

/// Result of running one bidirectional layer over a sequence.
#[derive(Clone, Debug)]
pub struct BiGruOutput {
    /// `[B, T, 2·hidden]`: forward state then backward state at each step.
    pub sequence: Var,
    /// Forward state after the last frame.
    pub last_forward: Var,
    /// Backward state after the first frame.
    pub last_backward: Var,
}

#[derive(Clone, Debug)]
pub struct BiGruLayer {
    pub forward: GruCell,
    pub backward: GruCell,
}

impl BiGruLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        group: Group,
        rng: &mut R,
    ) -> Self {
        BiGruLayer {
            forward: GruCell::new(store, &format!("{name}.fwd"), input, hidden, group, rng),
            backward: GruCell::new(store, &format!("{name}.bwd"), input, hidden, group, rng),
        }
    }

    /// Both directions sharing one set of weights.
    pub fn tied(cell: GruCell) -> Self {
        BiGruLayer {
            forward: cell.clone(),
            backward: cell,
        }
    }

    /// Runs both directions over `x: [B, T, input]`, each frame visited once per direction.
    pub fn run(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<BiGruOutput> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[2] != self.forward.input {
            return Err(Error::dim("bigru", &shape, &[self.forward.input]));
        }
        let (batch, steps, hid) = (shape[0], shape[1], self.forward.hidden);
        let frames: Vec<Var> = (0..steps)
            .map(|t| tape.select(x, 1, t))
            .collect::<Result<_>>()?;
        let fwd = self.forward.bind(tape, store);
        let bwd = self.backward.bind(tape, store);
        let h0 = tape.constant(Tensor::zeros(&[batch, hid]));

        let mut fwd_states = Vec::with_capacity(steps);
        let mut h = h0;
        for &f in &frames {
            h = gru_cell_step(tape, &fwd, f, h)?;
            fwd_states.push(h);
        }
        let mut bwd_states = vec![h0; steps];
        let mut h = h0;
        for t in (0..steps).rev() {
            h = gru_cell_step(tape, &bwd, frames[t], h)?;
            bwd_states[t] = h;
        }

        let stack = |tape: &mut Tape, states: &[Var]| -> Result<Var> {
            let cols = states
                .iter()
                .map(|&s| tape.reshape(s, &[batch, 1, hid]))
                .collect::<Result<Vec<_>>>()?;
            tape.concat(&cols, 1)
        };
        let f = stack(tape, &fwd_states)?;
        let b = stack(tape, &bwd_states)?;
        Ok(BiGruOutput {
            sequence: tape.concat(&[f, b], 2)?,
            last_forward: fwd_states[steps - 1],
            last_backward: bwd_states[0],
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub classes: usize,
}

impl Default for GruConfig {
    fn default() -> Self {
        GruConfig {
            input_dim: crate::features::FEATURE_DIM,
            hidden: 64,
            layers: 2,
            classes: 3,
        }
    }
}

/// Stacked bidirectional GRU; the final forward and backward states feed a linear head.
#[derive(Clone, Debug)]
pub struct BiGruClassifier {
    pub layers: Vec<BiGruLayer>,
    pub head: Linear,
    pub config: GruConfig,
}

impl BiGruClassifier {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: GruConfig,
        group: Group,
        rng: &mut R,
    ) -> Result<Self> {
        if config.layers == 0 || config.hidden == 0 || config.classes == 0 {
            return Err(Error::contract(format!("invalid GRU config {config:?}")));
        }
        let layers = (0..config.layers)
            .map(|l| {
                let input = if l == 0 {
                    config.input_dim
                } else {
                    2 * config.hidden
                };
                BiGruLayer::new(store, &format!("{name}.gru{l}"), input, config.hidden, group, rng)
            })
            .collect();
        let head = Linear::new(
            store,
            &format!("{name}.head"),
            2 * config.hidden,
            config.classes,
            group,
            rng,
        );
        Ok(BiGruClassifier {
            layers,
            head,
            config,
        })
    }

    /// Logits `[B, classes]` for features `[B, T, input_dim]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        if shape.len() != 3 || shape[1] == 0 {
            return Err(Error::contract(format!(
                "GRU input must be a non-empty [batch, time, dim] sequence, got {shape:?}"
            )));
        }
        let mut seq = x;
        let mut last = None;
        for layer in &self.layers {
            let out = layer.run(tape, store, seq)?;
            seq = out.sequence;
            last = Some(out);
        }
        let last = last.expect("at least one layer");
        let repr = tape.concat(&[last.last_forward, last.last_backward], 1)?;
        self.head.forward(tape, store, repr)
    }
}
