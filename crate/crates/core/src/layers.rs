//! Shared building blocks: embedding table, LSTM cell, linear maps and
//! additive attention.
//!
//! Weights are drawn uniformly from `[-INIT_SCALE, INIT_SCALE]`, biases start
//! at zero and the LSTM forget-gate bias at one.

use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{ParamId, ParamStore, Tape, Var};

pub const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, vocab_size: usize, dim: usize) -> Result<Self> {
        let table = store.add_uniform(name, &[vocab_size, dim], INIT_SCALE, rng)?;
        Ok(Embedding { table, vocab_size, dim })
    }

    pub fn lookup(&self, tape: &mut Tape<'_>, id: usize) -> Result<Var> {
        let t = tape.param(self.table);
        tape.embed_row(t, id)
    }

    /// Looks up several ids at once, giving a `[n, dim]` matrix.
    pub fn lookup_many(&self, tape: &mut Tape<'_>, ids: &[usize]) -> Result<Var> {
        let t = tape.param(self.table);
        tape.embed_rows(t, ids)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.add_uniform(format!("{prefix}.W"), &[output_dim, input_dim], INIT_SCALE, rng)?;
        let bias = if bias {
            Some(store.add_constant(format!("{prefix}.b"), &[output_dim], 0.0)?)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            input_dim,
            output_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.affine(w, x, b)
            }
            None => tape.matvec(w, x),
        }
    }
}

/// Hidden and cell vectors of an LSTM.
#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape<'_>, hidden_dim: usize) -> Self {
        LstmState {
            hidden: tape.zeros(&[hidden_dim]),
            cell: tape.zeros(&[hidden_dim]),
        }
    }
}

/// Single-layer LSTM without peepholes. Gate order is input, forget,
/// output, candidate; each gate has a `[hidden, input + hidden]` matrix.
#[derive(Clone, Debug)]
pub struct Lstm {
    pub input_dim: usize,
    pub hidden_dim: usize,
    weights: [ParamId; 4],
    biases: [ParamId; 4],
}

const GATES: [&str; 4] = ["i", "f", "o", "g"];

impl Lstm {
    pub fn new<R: Rng>(store: &mut ParamStore, rng: &mut R, prefix: &str, input_dim: usize, hidden_dim: usize) -> Result<Self> {
        let mut weights = Vec::with_capacity(4);
        for gate in GATES {
            weights.push(store.add_uniform(
                format!("{prefix}.W_{gate}"),
                &[hidden_dim, input_dim + hidden_dim],
                INIT_SCALE,
                rng,
            )?);
        }
        let mut biases = Vec::with_capacity(4);
        for gate in GATES {
            let fill = if gate == "f" { 1.0 } else { 0.0 };
            biases.push(store.add_constant(format!("{prefix}.b_{gate}"), &[hidden_dim], fill)?);
        }
        Ok(Lstm {
            input_dim,
            hidden_dim,
            weights: weights.try_into().unwrap(),
            biases: biases.try_into().unwrap(),
        })
    }

    pub fn weight(&self, gate: usize) -> ParamId {
        self.weights[gate]
    }

    pub fn bias(&self, gate: usize) -> ParamId {
        self.biases[gate]
    }

    pub fn step(&self, tape: &mut Tape<'_>, x: Var, state: LstmState) -> Result<LstmState> {
        let x_len = tape.value(x).len();
        if x_len != self.input_dim {
            return Err(Error::ShapeMismatch {
                op: "lstm_step",
                left: vec![self.input_dim],
                right: vec![x_len],
            });
        }
        for v in [state.hidden, state.cell] {
            let n = tape.value(v).len();
            if n != self.hidden_dim {
                return Err(Error::ShapeMismatch {
                    op: "lstm_step",
                    left: vec![self.hidden_dim],
                    right: vec![n],
                });
            }
        }
        let xh = tape.concat(&[x, state.hidden])?;
        let mut pre = [xh; 4];
        for (k, p) in pre.iter_mut().enumerate() {
            let w = tape.param(self.weights[k]);
            let b = tape.param(self.biases[k]);
            *p = tape.affine(w, xh, b)?;
        }
        let i = tape.sigmoid(pre[0]);
        let f = tape.sigmoid(pre[1]);
        let o = tape.sigmoid(pre[2]);
        let g = tape.tanh(pre[3]);
        let keep = tape.mul(f, state.cell)?;
        let write = tape.mul(i, g)?;
        let cell = tape.add(keep, write)?;
        let squashed = tape.tanh(cell);
        let hidden = tape.mul(o, squashed)?;
        Ok(LstmState { hidden, cell })
    }

    /// Runs the LSTM over a token sequence, returning every hidden state and
    /// the final state.
    pub fn encode(
        &self,
        tape: &mut Tape<'_>,
        embedding: &Embedding,
        tokens: &[usize],
        init: Option<LstmState>,
    ) -> Result<(Vec<Var>, LstmState)> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput { op: "encode_sequence" });
        }
        let mut state = match init {
            Some(s) => s,
            None => LstmState::zeros(tape, self.hidden_dim),
        };
        let mut hiddens = Vec::with_capacity(tokens.len());
        for &t in tokens {
            let x = embedding.lookup(tape, t)?;
            state = self.step(tape, x, state)?;
            hiddens.push(state.hidden);
        }
        Ok((hiddens, state))
    }
}

/// Additive attention `softmax_k(vᵀ tanh(W_key h_k + W_query q))`.
#[derive(Clone, Debug)]
pub struct Attention {
    pub w_key: ParamId,
    pub w_query: ParamId,
    pub v: ParamId,
    pub key_dim: usize,
    pub query_dim: usize,
    pub attention_dim: usize,
}

impl Attention {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        key_dim: usize,
        query_dim: usize,
        attention_dim: usize,
    ) -> Result<Self> {
        Ok(Attention {
            w_key: store.add_uniform(format!("{prefix}.W_key"), &[attention_dim, key_dim], INIT_SCALE, rng)?,
            w_query: store.add_uniform(format!("{prefix}.W_query"), &[attention_dim, query_dim], INIT_SCALE, rng)?,
            v: store.add_uniform(format!("{prefix}.v"), &[attention_dim], INIT_SCALE, rng)?,
            key_dim,
            query_dim,
            attention_dim,
        })
    }

    /// Projects a `[k, key_dim]` key matrix to `[k, attention_dim]`. The
    /// result can be reused across queries.
    pub fn project_keys(&self, tape: &mut Tape<'_>, keys: Var) -> Result<Var> {
        let w = tape.param(self.w_key);
        tape.matmul_t(keys, w)
    }

    /// Unnormalized scores for already projected keys.
    pub fn scores(&self, tape: &mut Tape<'_>, projected_keys: Var, query: Var) -> Result<Var> {
        let wq = tape.param(self.w_query);
        let q = tape.matvec(wq, query)?;
        let v = tape.param(self.v);
        tape.attention_scores(projected_keys, q, v)
    }

    /// Attention distribution over a list of key vectors.
    pub fn attend(&self, tape: &mut Tape<'_>, keys: &[Var], query: Var) -> Result<Var> {
        if keys.is_empty() {
            return Err(Error::EmptyInput { op: "attend" });
        }
        let k = tape.stack(keys)?;
        let pk = self.project_keys(tape, k)?;
        let s = self.scores(tape, pk, query)?;
        tape.softmax(s)
    }
}
