//! Single-layer LSTM encoder-decoder whose token inputs are a trainable embedding
//! concatenated with the word's frozen VAD vector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Batch, Vocabulary, NUM_RESERVED, PAD, SOS};
use crate::error::{Error, Result};
use crate::lexicon::{Lexicon, VadVector};
use crate::tensor::{log_softmax_in_place, matmul_into, sigmoid, Graph, Tensor, Var};

pub const AFFECT_DIM: usize = 3;
pub const INIT_RANGE: f64 = 0.08;
pub const FORGET_BIAS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Width of the trainable part of the input embedding.
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub use_affect_input: bool,
    /// Encoder and decoder read from one embedding table.
    pub share_embeddings: bool,
    pub max_decode_len: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: 32-wide embeddings, 64 hidden units, affect inputs on.
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            embed_dim: 32,
            hidden_dim: 64,
            use_affect_input: true,
            share_embeddings: true,
            max_decode_len: 20,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.embed_dim + if self.use_affect_input { AFFECT_DIM } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size <= NUM_RESERVED || self.embed_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::config(format!("invalid model dimensions {self:?}")));
        }
        Ok(())
    }
}

/// All model tensors. LSTM weights act on `[input ; hidden]` rows and produce the
/// gate pre-activations in the order input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embedding: Tensor,
    /// Present only when the decoder has its own table.
    pub decoder_embedding: Option<Tensor>,
    pub enc_w: Tensor,
    pub enc_b: Tensor,
    pub dec_w: Tensor,
    pub dec_b: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
    /// Frozen `vocab_size x 3` VAD table; never trained.
    pub affect: Tensor,
}

impl ModelParams {
    /// Trainable tensors in their fixed order.
    pub fn trainable(&self) -> Vec<&Tensor> {
        let mut v = vec![&self.embedding];
        v.extend(self.decoder_embedding.as_ref());
        v.extend([
            &self.enc_w,
            &self.enc_b,
            &self.dec_w,
            &self.dec_b,
            &self.out_w,
            &self.out_b,
        ]);
        v
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = vec![&mut self.embedding];
        v.extend(self.decoder_embedding.as_mut());
        v.extend([
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.dec_w,
            &mut self.dec_b,
            &mut self.out_w,
            &mut self.out_b,
        ]);
        v
    }

    pub fn set_trainable(&mut self, values: &[Tensor]) {
        let slots = self.trainable_mut();
        assert_eq!(slots.len(), values.len());
        for (slot, v) in slots.into_iter().zip(values) {
            *slot = v.clone();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Seq2Seq {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub vocab: Vocabulary,
}

/// VAD rows for every vocabulary token; reserved tokens are neutral. Stored at
/// 32-bit precision like every other model tensor.
pub fn affect_table(vocab: &Vocabulary, lexicon: &Lexicon) -> Tensor {
    let mut data = Vec::with_capacity(vocab.len() * AFFECT_DIM);
    for (id, tok) in vocab.tokens().iter().enumerate() {
        let v = if id < NUM_RESERVED {
            VadVector::NEUTRAL
        } else {
            lexicon.w2av(tok)
        };
        data.extend(v.to_array());
    }
    let mut t = Tensor::new(vocab.len(), AFFECT_DIM, data);
    t.round_to_f32();
    t
}

/// Graph handles for one forward pass.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub trainable: Vec<Var>,
    embedding: Var,
    decoder_embedding: Var,
    enc_w: Var,
    enc_b: Var,
    dec_w: Var,
    dec_b: Var,
    out_w: Var,
    out_b: Var,
    affect: Var,
}

impl Seq2Seq {
    /// Uniform(-0.08, 0.08) weights and embeddings, zero biases with the forget
    /// gate at +1. Parameters are stored at 32-bit precision.
    pub fn init(config: ModelConfig, lexicon: &Lexicon, vocab: Vocabulary, seed: u64) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(Error::config(format!(
                "config vocab size {} does not match vocabulary of {}",
                config.vocab_size,
                vocab.len()
            )));
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, e, h) = (config.vocab_size, config.embed_dim, config.hidden_dim);
        let input = config.input_dim();
        let embedding = Tensor::uniform(v, e, INIT_RANGE, &mut rng);
        let decoder_embedding = (!config.share_embeddings).then(|| Tensor::uniform(v, e, INIT_RANGE, &mut rng));
        let enc_w = Tensor::uniform(input + h, 4 * h, INIT_RANGE, &mut rng);
        let dec_w = Tensor::uniform(input + h, 4 * h, INIT_RANGE, &mut rng);
        let out_w = Tensor::uniform(h, v, INIT_RANGE, &mut rng);
        let lstm_bias = || {
            let mut b = Tensor::zeros(1, 4 * h);
            b.data[h..2 * h].iter_mut().for_each(|x| *x = FORGET_BIAS);
            b
        };
        let mut params = ModelParams {
            embedding,
            decoder_embedding,
            enc_w,
            enc_b: lstm_bias(),
            dec_w,
            dec_b: lstm_bias(),
            out_w,
            out_b: Tensor::zeros(1, v),
            affect: affect_table(&vocab, lexicon),
        };
        params.trainable_mut().into_iter().for_each(Tensor::round_to_f32);
        Ok(Seq2Seq { config, params, vocab })
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id >= self.config.vocab_size {
            return Err(Error::data(format!(
                "token id {id} out of range for vocab {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    fn embed_with(&self, table: &Tensor, id: usize) -> Result<Vec<f64>> {
        self.check_id(id)?;
        let mut x = table.row(id).to_vec();
        if self.config.use_affect_input {
            x.extend_from_slice(self.params.affect.row(id));
        }
        Ok(x)
    }

    /// Encoder-side input vector: trainable embedding, then the token's VAD triple
    /// when affect inputs are on.
    pub fn embed(&self, id: usize) -> Result<Vec<f64>> {
        self.embed_with(&self.params.embedding, id)
    }

    fn decoder_table(&self) -> &Tensor {
        self.params.decoder_embedding.as_ref().unwrap_or(&self.params.embedding)
    }

    fn lstm_step(&self, w: &Tensor, b: &Tensor, x: &[f64], state: &DecoderState) -> DecoderState {
        let h = self.config.hidden_dim;
        let mut xh = Vec::with_capacity(x.len() + h);
        xh.extend_from_slice(x);
        xh.extend_from_slice(&state.hidden);
        let mut z = b.data.clone();
        matmul_into(&xh, &w.data, &mut z, 1, xh.len(), 4 * h);
        let mut hidden = vec![0.0; h];
        let mut cell = vec![0.0; h];
        for j in 0..h {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[h + j]);
            let g = z[2 * h + j].tanh();
            let o = sigmoid(z[3 * h + j]);
            cell[j] = f * state.cell[j] + i * g;
            hidden[j] = o * cell[j].tanh();
        }
        DecoderState { hidden, cell }
    }

    pub fn zero_state(&self) -> DecoderState {
        let h = self.config.hidden_dim;
        DecoderState {
            hidden: vec![0.0; h],
            cell: vec![0.0; h],
        }
    }

    /// Runs the encoder left to right; PAD tokens are skipped.
    pub fn encode(&self, prompt_ids: &[usize]) -> Result<DecoderState> {
        if prompt_ids.iter().all(|&id| id == PAD) {
            return Err(Error::data("cannot encode an empty prompt"));
        }
        let mut state = self.zero_state();
        for &id in prompt_ids.iter().filter(|&&id| id != PAD) {
            let x = self.embed(id)?;
            state = self.lstm_step(&self.params.enc_w, &self.params.enc_b, &x, &state);
        }
        Ok(state)
    }

    /// One decoder step: log-probabilities over the vocabulary and the next state.
    pub fn decode_step(&self, state: &DecoderState, prev_id: usize) -> Result<(Vec<f64>, DecoderState)> {
        let x = self.embed_with(self.decoder_table(), prev_id)?;
        let next = self.lstm_step(&self.params.dec_w, &self.params.dec_b, &x, state);
        let v = self.config.vocab_size;
        let mut logits = self.params.out_b.data.clone();
        matmul_into(
            &next.hidden,
            &self.params.out_w.data,
            &mut logits,
            1,
            self.config.hidden_dim,
            v,
        );
        log_softmax_in_place(&mut logits);
        Ok((logits, next))
    }

    /// Registers the given trainable values (in [`ModelParams::trainable`] order) on a graph.
    pub fn register(&self, g: &mut Graph, trainable: &[Tensor]) -> ParamVars {
        let vars: Vec<Var> = trainable.iter().map(|t| g.param(t.clone())).collect();
        let shared = self.config.share_embeddings;
        let off = usize::from(!shared);
        ParamVars {
            embedding: vars[0],
            decoder_embedding: if shared { vars[0] } else { vars[1] },
            enc_w: vars[1 + off],
            enc_b: vars[2 + off],
            dec_w: vars[3 + off],
            dec_b: vars[4 + off],
            out_w: vars[5 + off],
            out_b: vars[6 + off],
            affect: g.constant(self.params.affect.clone()),
            trainable: vars,
        }
    }

    fn graph_inputs(&self, g: &mut Graph, table: Var, affect: Var, ids: &[usize]) -> Result<Var> {
        let emb = g.gather_rows(table, ids)?;
        if self.config.use_affect_input {
            let aff = g.gather_rows(affect, ids)?;
            g.concat(&[emb, aff])
        } else {
            Ok(emb)
        }
    }

    fn graph_lstm(&self, g: &mut Graph, w: Var, b: Var, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.config.hidden_dim;
        let xh = g.concat(&[x, h])?;
        let z = g.matmul(xh, w)?;
        let z = g.add_row(z, b)?;
        let i = g.slice_cols(z, 0, hd)?;
        let f = g.slice_cols(z, hd, 2 * hd)?;
        let cand = g.slice_cols(z, 2 * hd, 3 * hd)?;
        let o = g.slice_cols(z, 3 * hd, 4 * hd)?;
        let (i, f, cand, o) = (g.sigmoid(i), g.sigmoid(f), g.tanh(cand), g.sigmoid(o));
        let keep = g.hadamard(f, c)?;
        let write = g.hadamard(i, cand)?;
        let c_new = g.add(keep, write)?;
        let tc = g.tanh(c_new);
        let h_new = g.hadamard(o, tc)?;
        Ok((h_new, c_new))
    }

    fn mask_blend(&self, g: &mut Graph, mask: &[f64], new: Var, old: Var) -> Result<Var> {
        let hd = self.config.hidden_dim;
        let on: Vec<f64> = mask.iter().flat_map(|&m| std::iter::repeat_n(m, hd)).collect();
        let off: Vec<f64> = on.iter().map(|m| 1.0 - m).collect();
        let on = g.constant(Tensor::new(mask.len(), hd, on));
        let off = g.constant(Tensor::new(mask.len(), hd, off));
        let a = g.hadamard(new, on)?;
        let b = g.hadamard(old, off)?;
        g.add(a, b)
    }

    /// Teacher-forced pass over a batch. Returns, for each response position, a
    /// `batch x 1` column with the log-probability of the reference token.
    /// Padded positions hold arbitrary finite values; callers mask them.
    pub fn teacher_forced(&self, g: &mut Graph, vars: &ParamVars, batch: &Batch) -> Result<Vec<Var>> {
        let rows = batch.len();
        let hd = self.config.hidden_dim;
        let mut h = g.constant(Tensor::zeros(rows, hd));
        let mut c = g.constant(Tensor::zeros(rows, hd));
        for t in 0..batch.prompts.len {
            let ids = batch.prompts.column(t);
            let mask = batch.prompts.mask_column(t);
            let x = self.graph_inputs(g, vars.embedding, vars.affect, &ids)?;
            let (h_new, c_new) = self.graph_lstm(g, vars.enc_w, vars.enc_b, x, h, c)?;
            if mask.iter().all(|&m| m == 1.0) {
                h = h_new;
                c = c_new;
            } else {
                h = self.mask_blend(g, &mask, h_new, h)?;
                c = self.mask_blend(g, &mask, c_new, c)?;
            }
        }
        let mut out = Vec::with_capacity(batch.responses.len);
        for t in 0..batch.responses.len {
            let prev = if t == 0 {
                vec![SOS; rows]
            } else {
                batch.responses.column(t - 1)
            };
            let target = batch.responses.column(t);
            let x = self.graph_inputs(g, vars.decoder_embedding, vars.affect, &prev)?;
            let (h_new, c_new) = self.graph_lstm(g, vars.dec_w, vars.dec_b, x, h, c)?;
            h = h_new;
            c = c_new;
            let logits = g.matmul(h, vars.out_w)?;
            let logits = g.add_row(logits, vars.out_b)?;
            let logp = g.log_softmax_row(logits);
            out.push(g.pick_per_row(logp, &target)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, tokenize, DialoguePair, EOS};

    fn lexicon() -> Lexicon {
        Lexicon::from_entries([
            ("bored", VadVector::new(2.95, 3.65, 4.96)),
            ("mother", VadVector::new(7.53, 4.73, 6.11)),
        ])
    }

    fn vocab() -> Vocabulary {
        let t = tokenize("bored mother hi there you");
        build_vocab([t.as_slice()], 100).unwrap()
    }

    fn small(use_affect: bool) -> Seq2Seq {
        let v = vocab();
        let mut cfg = ModelConfig::new(v.len());
        cfg.embed_dim = 16;
        cfg.hidden_dim = 8;
        cfg.use_affect_input = use_affect;
        Seq2Seq::init(cfg, &lexicon(), v, 11).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_fills_affect() {
        let a = small(true);
        let b = small(true);
        assert_eq!(a.params, b.params);
        let bored = a.vocab.id("bored");
        let row = a.params.affect.row(bored);
        for (x, y) in row.iter().zip([2.95, 3.65, 4.96]) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(a.params.affect.row(PAD), &[5.0, 1.0, 5.0]);
        let f = &a.params.enc_b.data;
        assert!(f[8..16].iter().all(|&x| x == 1.0) && f[..8].iter().all(|&x| x == 0.0));
        assert!(a.params.enc_w.data.iter().all(|x| x.abs() < INIT_RANGE));
        assert!(a.params.enc_w.data.iter().all(|&x| x == x as f32 as f64));
    }

    #[test]
    fn embedding_layout() {
        let m = small(true);
        let mother = m.vocab.id("mother");
        let x = m.embed(mother).unwrap();
        assert_eq!(x.len(), 19);
        for (x, y) in x[16..].iter().zip([7.53, 4.73, 6.11]) {
            assert!((x - y).abs() < 1e-6);
        }
        assert_eq!(small(false).embed(mother).unwrap().len(), 16);
        assert!(m.embed(m.config.vocab_size).is_err());
    }

    #[test]
    fn encoder_hand_evaluation() {
        // Zero weights; the candidate-gate bias is 0.5 so the cell actually moves.
        let mut m = small(true);
        let h = m.config.hidden_dim;
        m.params.enc_w.data.iter_mut().for_each(|x| *x = 0.0);
        m.params.enc_b.data[2 * h..3 * h].iter_mut().for_each(|x| *x = 0.5);
        let s = m.encode(&[4, 5]).unwrap();
        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let c1 = 0.5 * 0.5f64.tanh();
        let c2 = sig(1.0) * c1 + 0.5 * 0.5f64.tanh();
        let h2 = 0.5 * c2.tanh();
        assert_eq!(s.hidden.len(), h);
        for j in 0..h {
            assert!((s.cell[j] - c2).abs() < 1e-15);
            assert!((s.hidden[j] - h2).abs() < 1e-15);
        }
    }

    #[test]
    fn pad_suffix_does_not_change_state() {
        let m = small(true);
        let a = m.encode(&[4, 6, 5]).unwrap();
        let b = m.encode(&[4, 6, 5, PAD, PAD]).unwrap();
        assert_eq!(a, b);
        assert!(m.encode(&[]).is_err());
        assert!(m.encode(&[PAD]).is_err());
    }

    #[test]
    fn decode_step_normalized_and_deterministic() {
        let m = small(true);
        let s = m.encode(&[4, 5]).unwrap();
        let (lp, s2) = m.decode_step(&s, SOS).unwrap();
        let total: f64 = lp.iter().map(|x| x.exp()).sum();
        assert!((total - 1.0).abs() < 1e-6);
        let (lp_again, s2_again) = m.decode_step(&s, SOS).unwrap();
        assert_eq!(lp, lp_again);
        assert_eq!(s2, s2_again);
    }

    #[test]
    fn decode_step_hand_evaluation() {
        // vocab of the 4 reserved tokens + "a" + "b", hidden 2, embed 1, no affect.
        let words = tokenize("a b");
        let v = build_vocab([words.as_slice()], 6).unwrap();
        let cfg = ModelConfig {
            vocab_size: 6,
            embed_dim: 1,
            hidden_dim: 2,
            use_affect_input: false,
            share_embeddings: true,
            max_decode_len: 5,
        };
        let mut m = Seq2Seq::init(cfg, &Lexicon::default(), v, 0).unwrap();
        m.params.embedding.data.iter_mut().for_each(|x| *x = 0.0);
        m.params.embedding.data[SOS] = 1.0;
        // gates: i,f,g,o each 2 wide; x feeds the candidate gate with weight 2 on unit 0
        m.params.dec_w.data.iter_mut().for_each(|x| *x = 0.0);
        m.params.dec_w.data[4] = 2.0;
        m.params.dec_b.data.iter_mut().for_each(|x| *x = 0.0);
        // identity-like projection: unit 0 -> "a", unit 1 -> "b"
        m.params.out_w.data.iter_mut().for_each(|x| *x = 0.0);
        m.params.out_w.data[4] = 1.0;
        m.params.out_w.data[6 + 5] = 1.0;
        m.params.out_b.data.iter_mut().for_each(|x| *x = 0.0);

        let (lp, _) = m.decode_step(&m.zero_state(), SOS).unwrap();
        let c0 = 0.5 * 2f64.tanh();
        let h0 = 0.5 * c0.tanh();
        let z = 4.0 + h0.exp() + 1.0;
        assert!((lp[4] - (h0 - z.ln())).abs() < 1e-12);
        assert!((lp[5] - (0.0 - z.ln())).abs() < 1e-12);
        assert!((lp[EOS] - (0.0 - z.ln())).abs() < 1e-12);
    }

    #[test]
    fn graph_path_matches_inference_path() {
        for shared in [true, false] {
            let v = vocab();
            let mut cfg = ModelConfig::new(v.len());
            cfg.embed_dim = 5;
            cfg.hidden_dim = 4;
            cfg.share_embeddings = shared;
            let m = Seq2Seq::init(cfg, &lexicon(), v, 3).unwrap();
            let pairs = vec![
                DialoguePair {
                    prompt_ids: vec![4, 5, 6],
                    response_ids: vec![7, 8, EOS],
                },
                DialoguePair {
                    prompt_ids: vec![8],
                    response_ids: vec![EOS],
                },
            ];
            let batch = Batch::new(pairs.clone());
            let mut g = Graph::new();
            let trainable: Vec<Tensor> = m.params.trainable().into_iter().cloned().collect();
            let vars = m.register(&mut g, &trainable);
            let cols = m.teacher_forced(&mut g, &vars, &batch).unwrap();
            for (r, p) in pairs.iter().enumerate() {
                let mut state = m.encode(&p.prompt_ids).unwrap();
                let mut prev = SOS;
                for (t, &y) in p.response_ids.iter().enumerate() {
                    let (lp, next) = m.decode_step(&state, prev).unwrap();
                    let from_graph = g.value(cols[t]).data[r];
                    assert!((lp[y] - from_graph).abs() < 1e-12, "row {r} step {t}");
                    state = next;
                    prev = y;
                }
            }
        }
    }

    #[test]
    fn affect_off_ignores_lexicon() {
        let v = vocab();
        let mut cfg = ModelConfig::new(v.len());
        cfg.use_affect_input = false;
        let a = Seq2Seq::init(cfg, &lexicon(), v.clone(), 5).unwrap();
        let b = Seq2Seq::init(cfg, &Lexicon::default(), v, 5).unwrap();
        let sa = a.encode(&[4, 5]).unwrap();
        let sb = b.encode(&[4, 5]).unwrap();
        assert_eq!(sa, sb);
        assert_eq!(a.decode_step(&sa, SOS).unwrap().0, b.decode_step(&sb, SOS).unwrap().0);
    }
}
