//! Neural cells built from tape operations. Parameters are looked up by
//! dot-separated prefix in a [`ParamStore`].

use rand::Rng;

use super::{Init, ParamStore, Result, Tape, Tensor, TensorError, Var};

/// `x·Wᵀ + b` with `{prefix}.w` of shape `[out × in]` and optional `{prefix}.b`.
/// `x` may be a vector `[in]` or a matrix `[n × in]`.
pub fn linear(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var) -> Result<Var> {
    let w = tape.param(store, store.id(&format!("{prefix}.w"))?);
    let y = match tape.shape(x).len() {
        1 => tape.matvec(w, x)?,
        _ => tape.matmul_t(x, w)?,
    };
    match store.id(&format!("{prefix}.b")) {
        Ok(b) => {
            let b = tape.param(store, b);
            tape.add_row(y, b)
        }
        Err(_) => Ok(y),
    }
}

pub fn init_linear<R: Rng>(
    store: &mut ParamStore,
    prefix: &str,
    input: usize,
    output: usize,
    bias: bool,
    rng: &mut R,
) -> Result<()> {
    store.add(&format!("{prefix}.w"), &[output, input], Init::Uniform, rng)?;
    if bias {
        store.add(&format!("{prefix}.b"), &[output], Init::Zeros, rng)?;
    }
    Ok(())
}

/// GRU parameters: `w_ih [3d × in]`, `w_hh [3d × d]`, `b_ih [3d]`, `b_hh [3d]`,
/// gate blocks ordered reset, update, candidate.
pub fn init_gru<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Result<()> {
    store.add(&format!("{prefix}.w_ih"), &[3 * hidden, input], Init::Uniform, rng)?;
    store.add(&format!("{prefix}.w_hh"), &[3 * hidden, hidden], Init::Uniform, rng)?;
    store.add(&format!("{prefix}.b_ih"), &[3 * hidden], Init::Zeros, rng)?;
    store.add(&format!("{prefix}.b_hh"), &[3 * hidden], Init::Zeros, rng)?;
    Ok(())
}

/// Standard GRU update:
///
/// ```text
/// r  = σ(W_ir a + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz a + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in a + b_in + r ∘ (W_hn h + b_hn))
/// h' = (1 − z) ∘ n + z ∘ h
/// ```
///
/// Works row-wise when `h` and `a` are `[nodes × d]` matrices.
pub fn gru_cell(tape: &mut Tape, store: &ParamStore, prefix: &str, h: Var, a: Var) -> Result<Var> {
    let (sh, sa) = (tape.shape(h).to_vec(), tape.shape(a).to_vec());
    if sh.len() != sa.len() || sh.len() == 2 && sh[0] != sa[0] {
        return Err(TensorError::Shape {
            op: "gru_cell",
            left: sh,
            right: sa,
        });
    }
    let d = *sh.last().unwrap();
    let w_ih = tape.param(store, store.id(&format!("{prefix}.w_ih"))?);
    let w_hh = tape.param(store, store.id(&format!("{prefix}.w_hh"))?);
    let b_ih = tape.param(store, store.id(&format!("{prefix}.b_ih"))?);
    let b_hh = tape.param(store, store.id(&format!("{prefix}.b_hh"))?);
    if tape.shape(w_hh) != [3 * d, d] {
        return Err(TensorError::Shape {
            op: "gru_cell",
            left: tape.shape(w_hh).to_vec(),
            right: sh,
        });
    }
    let (gi, gh) = if sh.len() == 1 {
        (tape.matvec(w_ih, a)?, tape.matvec(w_hh, h)?)
    } else {
        (tape.matmul_t(a, w_ih)?, tape.matmul_t(h, w_hh)?)
    };
    let gi = tape.add_row(gi, b_ih)?;
    let gh = tape.add_row(gh, b_hh)?;

    let gi_rz = tape.slice_last(gi, 0, 2 * d)?;
    let gh_rz = tape.slice_last(gh, 0, 2 * d)?;
    let rz = tape.add(gi_rz, gh_rz)?;
    let rz = tape.sigmoid(rz)?;
    let r = tape.slice_last(rz, 0, d)?;
    let z = tape.slice_last(rz, d, d)?;

    let gi_n = tape.slice_last(gi, 2 * d, d)?;
    let gh_n = tape.slice_last(gh, 2 * d, d)?;
    let rn = tape.mul(r, gh_n)?;
    let n = tape.add(gi_n, rn)?;
    let n = tape.tanh(n)?;

    // n + z ∘ (h − n)
    let diff = tape.sub(h, n)?;
    let zd = tape.mul(z, diff)?;
    tape.add(n, zd)
}

/// LSTM parameters: `w_ih [4h × in]`, `w_hh [4h × h]`, `b [4h]`, gate blocks
/// ordered input, forget, cell, output.
pub fn init_lstm<R: Rng>(store: &mut ParamStore, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Result<()> {
    store.add(&format!("{prefix}.w_ih"), &[4 * hidden, input], Init::Uniform, rng)?;
    store.add(&format!("{prefix}.w_hh"), &[4 * hidden, hidden], Init::Uniform, rng)?;
    store.add(&format!("{prefix}.b"), &[4 * hidden], Init::Zeros, rng)?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, hidden: usize) -> Result<Self> {
        let h = tape.constant(Tensor::zeros(&[hidden]))?;
        let c = tape.constant(Tensor::zeros(&[hidden]))?;
        Ok(LstmState { h, c })
    }
}

pub fn lstm_hidden(store: &ParamStore, prefix: &str) -> Result<usize> {
    Ok(store.value(store.id(&format!("{prefix}.w_hh"))?).shape()[1])
}

/// One step of a vanilla four-gate LSTM over vector inputs.
pub fn lstm_cell(tape: &mut Tape, store: &ParamStore, prefix: &str, x: Var, state: LstmState) -> Result<LstmState> {
    let w_ih = tape.param(store, store.id(&format!("{prefix}.w_ih"))?);
    let w_hh = tape.param(store, store.id(&format!("{prefix}.w_hh"))?);
    let b = tape.param(store, store.id(&format!("{prefix}.b"))?);
    let hidden = tape.shape(w_hh)[1];
    if tape.shape(state.h) != [hidden] || tape.shape(w_ih)[1] != tape.shape(x)[0] {
        return Err(TensorError::Shape {
            op: "lstm_cell",
            left: tape.shape(w_ih).to_vec(),
            right: tape.shape(x).to_vec(),
        });
    }
    let gx = tape.matvec(w_ih, x)?;
    let gh = tape.matvec(w_hh, state.h)?;
    let g = tape.add(gx, gh)?;
    let g = tape.add(g, b)?;
    let ifo_in = tape.slice(g, 0, 2 * hidden)?;
    let if_ = tape.sigmoid(ifo_in)?;
    let i = tape.slice(if_, 0, hidden)?;
    let f = tape.slice(if_, hidden, hidden)?;
    let cand = tape.slice(g, 2 * hidden, hidden)?;
    let cand = tape.tanh(cand)?;
    let o = tape.slice(g, 3 * hidden, hidden)?;
    let o = tape.sigmoid(o)?;
    let fc = tape.mul(f, state.c)?;
    let ig = tape.mul(i, cand)?;
    let c = tape.add(fc, ig)?;
    let tc = tape.tanh(c)?;
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Bidirectional LSTM over a sequence. Output `i` is the forward state at `i`
/// concatenated with the backward state at `i`. Uses `{prefix}.fwd` and
/// `{prefix}.bwd` parameter blocks.
pub fn birnn_encode(tape: &mut Tape, store: &ParamStore, prefix: &str, inputs: &[Var]) -> Result<Vec<Var>> {
    if inputs.is_empty() {
        return Err(TensorError::Invalid {
            op: "birnn_encode",
            msg: "empty input sequence".into(),
        });
    }
    let fwd = format!("{prefix}.fwd");
    let bwd = format!("{prefix}.bwd");
    let mut state = LstmState::zeros(tape, lstm_hidden(store, &fwd)?)?;
    let mut forward = Vec::with_capacity(inputs.len());
    for &x in inputs {
        state = lstm_cell(tape, store, &fwd, x, state)?;
        forward.push(state.h);
    }
    let mut state = LstmState::zeros(tape, lstm_hidden(store, &bwd)?)?;
    let mut backward = vec![state.h; inputs.len()];
    for (i, &x) in inputs.iter().enumerate().rev() {
        state = lstm_cell(tape, store, &bwd, x, state)?;
        backward[i] = state.h;
    }
    forward
        .into_iter()
        .zip(backward)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Tensor {
        Tensor::vector((0..n).map(|_| r.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn zero_gru_is_a_fixed_point_at_zero() {
        let mut s = ParamStore::new();
        init_gru(&mut s, "g", 4, 4, &mut rng(0)).unwrap();
        for id in s.ids().collect::<Vec<_>>() {
            s.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut t = Tape::new();
        let h = t.constant(Tensor::zeros(&[4])).unwrap();
        let a = t.constant(Tensor::zeros(&[4])).unwrap();
        let out = gru_cell(&mut t, &s, "g", h, a).unwrap();
        assert_eq!(t.value(out).data(), &[0.0; 4]);
    }

    #[test]
    fn saturated_update_gate_copies_previous_state() {
        // σ(50) = 1 − 1.9e-22, so h' − h = (1 − z)(n − h) is far below 1e-3.
        let mut r = rng(1);
        let mut s = ParamStore::new();
        init_gru(&mut s, "g", 4, 4, &mut r).unwrap();
        let b = s.id("g.b_ih").unwrap();
        s.value_mut(b).data_mut()[4..8].iter_mut().for_each(|x| *x = 50.0);
        let hv = random_vec(&mut r, 4);
        let mut t = Tape::new();
        let h = t.constant(hv.clone()).unwrap();
        let a = t.constant(random_vec(&mut r, 4)).unwrap();
        let out = gru_cell(&mut t, &s, "g", h, a).unwrap();
        for (x, y) in t.value(out).data().iter().zip(hv.data()) {
            assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn gru_output_stays_in_open_unit_interval() {
        let mut r = rng(2);
        let mut s = ParamStore::new();
        init_gru(&mut s, "g", 4, 4, &mut r).unwrap();
        let mut t = Tape::new();
        let h = t.constant(random_vec(&mut r, 4)).unwrap();
        let a = t.constant(Tensor::vector(vec![30.0, -30.0, 5.0, 2.0])).unwrap();
        let out = gru_cell(&mut t, &s, "g", h, a).unwrap();
        assert!(t.value(out).data().iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn gru_dimension_mismatch_is_an_error() {
        let mut s = ParamStore::new();
        init_gru(&mut s, "g", 4, 4, &mut rng(0)).unwrap();
        let mut t = Tape::new();
        let h = t.constant(Tensor::zeros(&[3])).unwrap();
        let a = t.constant(Tensor::zeros(&[4])).unwrap();
        assert!(gru_cell(&mut t, &s, "g", h, a).is_err());
    }

    #[test]
    fn gru_gradients_match_finite_differences() {
        let mut r = rng(3);
        let mut s = ParamStore::new();
        init_gru(&mut s, "g", 4, 4, &mut r).unwrap();
        let hv = random_vec(&mut r, 4);
        let av = random_vec(&mut r, 4);
        let readout = random_vec(&mut r, 4);
        let report = check_params(&mut s, |t, s| {
            let h = t.constant(hv.clone())?;
            let a = t.constant(av.clone())?;
            let w = t.constant(readout.clone())?;
            let out = gru_cell(t, s, "g", h, a)?;
            t.dot(out, w)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn birnn_single_token_is_one_step_each_way() {
        let mut r = rng(4);
        let mut s = ParamStore::new();
        init_lstm(&mut s, "e.fwd", 3, 2, &mut r).unwrap();
        init_lstm(&mut s, "e.bwd", 3, 2, &mut r).unwrap();
        let xv = random_vec(&mut r, 3);
        let mut t = Tape::new();
        let x = t.constant(xv).unwrap();
        let out = birnn_encode(&mut t, &s, "e", &[x]).unwrap();
        assert_eq!(out.len(), 1);
        let z = LstmState::zeros(&mut t, 2).unwrap();
        let f = lstm_cell(&mut t, &s, "e.fwd", x, z).unwrap();
        let b = lstm_cell(&mut t, &s, "e.bwd", x, z).unwrap();
        let mut expected = t.value(f.h).data().to_vec();
        expected.extend_from_slice(t.value(b.h).data());
        assert_eq!(t.value(out[0]).data(), expected.as_slice());
    }

    #[test]
    fn birnn_reversal_swaps_halves() {
        let mut r = rng(5);
        let mut s = ParamStore::new();
        init_lstm(&mut s, "e.fwd", 3, 2, &mut r).unwrap();
        // Same weights in both directions make the swap exact.
        let names = ["w_ih", "w_hh", "b"];
        for n in names {
            let v = s.value(s.id(&format!("e.fwd.{n}")).unwrap()).clone();
            s.insert(&format!("e.bwd.{n}"), v).unwrap();
        }
        let xs: Vec<Tensor> = (0..4).map(|_| random_vec(&mut r, 3)).collect();
        let mut t = Tape::new();
        let fwd: Vec<Var> = xs.iter().map(|x| t.constant(x.clone()).unwrap()).collect();
        let rev: Vec<Var> = fwd.iter().rev().copied().collect();
        let a = birnn_encode(&mut t, &s, "e", &fwd).unwrap();
        let b = birnn_encode(&mut t, &s, "e", &rev).unwrap();
        let n = a.len();
        for i in 0..n {
            let ai = t.value(a[i]).data();
            let bi = t.value(b[n - 1 - i]).data();
            assert_eq!(&ai[..2], &bi[2..]);
            assert_eq!(&ai[2..], &bi[..2]);
        }
    }

    #[test]
    fn birnn_rejects_empty_sequence() {
        let mut s = ParamStore::new();
        init_lstm(&mut s, "e.fwd", 3, 2, &mut rng(0)).unwrap();
        init_lstm(&mut s, "e.bwd", 3, 2, &mut rng(0)).unwrap();
        let mut t = Tape::new();
        assert!(birnn_encode(&mut t, &s, "e", &[]).is_err());
    }

    #[test]
    fn birnn_gradients_match_finite_differences() {
        let mut r = rng(6);
        let mut s = ParamStore::new();
        init_lstm(&mut s, "e.fwd", 4, 4, &mut r).unwrap();
        init_lstm(&mut s, "e.bwd", 4, 4, &mut r).unwrap();
        let xs: Vec<Tensor> = (0..3).map(|_| random_vec(&mut r, 4)).collect();
        let readout: Vec<Tensor> = (0..3).map(|_| random_vec(&mut r, 8)).collect();
        let report = check_params(&mut s, |t, s| {
            let vars = xs
                .iter()
                .map(|x| t.constant(x.clone()))
                .collect::<Result<Vec<_>>>()?;
            let outs = birnn_encode(t, s, "e", &vars)?;
            let mut terms = Vec::new();
            for (o, w) in outs.iter().zip(&readout) {
                let w = t.constant(w.clone())?;
                terms.push(t.dot(*o, w)?);
            }
            let parts = terms
                .iter()
                .map(|&v| t.reshape(v, &[1]))
                .collect::<Result<Vec<_>>>()?;
            let stacked = t.concat(&parts)?;
            t.sum(stacked)
        })
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
