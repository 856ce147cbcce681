use std::rc::Rc;
use std::sync::Arc;

use crate::autodiff::{log_softmax, softmax, Graph, ParamId, Var};
use crate::corpus::Vocabulary;
use crate::{Error, Result};

use super::lexicon::{build_lexicon_matrix, LexiconBias, LexiconMatrix};
use super::{AttentionKind, ModelParams};

/// Weights of one coupled-gate LSTM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl LstmParams {
    pub fn new(w: ParamId, b: ParamId, hidden: usize) -> Self {
        Self { w, b, hidden }
    }
}

/// One LSTM step with the forget gate tied to `1 - input gate`:
///
/// ```text
/// i  = sigmoid(W_i [x; h] + b_i)      o = sigmoid(W_o [x; h] + b_o)
/// c~ = tanh(W_c [x; h] + b_c)         c' = (1 - i) * c + i * c~
/// h' = o * tanh(c')
/// ```
pub fn lstm_step(
    g: &mut Graph,
    lstm: &LstmParams,
    x: Var,
    hidden: Var,
    cell: Var,
) -> Result<(Var, Var)> {
    let n = lstm.hidden;
    let w = g.params().get(lstm.w);
    if g.len(hidden) != n || g.len(cell) != n {
        return Err(Error::DimensionMismatch(format!(
            "LSTM state has width {}/{}, expected {n}",
            g.len(hidden),
            g.len(cell)
        )));
    }
    if w.rows != 3 * n || w.cols != g.len(x) + n {
        return Err(Error::DimensionMismatch(format!(
            "LSTM {} is {}x{}, input width {} needs {}x{}",
            g.params().name(lstm.w),
            w.rows,
            w.cols,
            g.len(x),
            3 * n,
            g.len(x) + n
        )));
    }
    let xh = g.concat(&[x, hidden]);
    let z = g.affine(lstm.w, Some(lstm.b), xh);
    let i_pre = g.slice(z, 0, n);
    let o_pre = g.slice(z, n, n);
    let c_pre = g.slice(z, 2 * n, n);
    let input_gate = g.sigmoid(i_pre);
    let forget_gate = g.one_minus(input_gate);
    let output_gate = g.sigmoid(o_pre);
    let candidate = g.tanh(c_pre);
    let kept = g.mul(forget_gate, cell);
    let written = g.mul(input_gate, candidate);
    let new_cell = g.add(kept, written);
    let squashed = g.tanh(new_cell);
    let new_hidden = g.mul(output_gate, squashed);
    Ok((new_hidden, new_cell))
}

/// Encoder result on a graph: one column per source word and the
/// decoder's initial hidden state.
#[derive(Debug, Clone)]
pub struct EncodedVars {
    pub columns: Rc<[Var]>,
    pub init: Var,
}

/// Bidirectional encoder. Column `j` is `[backward_j; forward_j]`; both
/// directions then consume `<s>` to produce the initial decoder state,
/// which is not an attention column.
pub fn encode(g: &mut Graph, params: &ModelParams, source: &[u32]) -> Result<EncodedVars> {
    if source.is_empty() {
        return Err(Error::EmptySentence);
    }
    let vocab = params.config.src_vocab_size;
    if let Some(&bad) = source.iter().find(|&&f| f as usize >= vocab) {
        return Err(Error::DimensionMismatch(format!(
            "source id {bad} outside vocabulary of {vocab}"
        )));
    }
    let h = params.config.hidden_dim;
    let ids = &params.ids;
    let run = |g: &mut Graph, lstm: &LstmParams, order: &mut dyn Iterator<Item = u32>| {
        let mut hidden = g.input(vec![0.0; h]);
        let mut cell = g.input(vec![0.0; h]);
        let mut states = Vec::with_capacity(source.len());
        for f in order {
            let x = g.embed(ids.src_embed, f as usize);
            (hidden, cell) = lstm_step(g, lstm, x, hidden, cell)?;
            states.push(hidden);
        }
        let x = g.embed(ids.src_embed, Vocabulary::END_ID as usize);
        let (last, _) = lstm_step(g, lstm, x, hidden, cell)?;
        Ok::<_, Error>((states, last))
    };
    let (fwd, fwd_last) = run(g, &ids.enc_fwd, &mut source.iter().copied())?;
    let (mut bwd, bwd_last) = run(g, &ids.enc_bwd, &mut source.iter().rev().copied())?;
    bwd.reverse();
    let columns: Vec<Var> = bwd
        .iter()
        .zip(&fwd)
        .map(|(&b, &f)| g.concat(&[b, f]))
        .collect();
    let init = g.concat(&[bwd_last, fwd_last]);
    Ok(EncodedVars {
        columns: columns.into(),
        init,
    })
}

/// Attention over the encoder columns: returns `(a, c)` with
/// `a = softmax(sim(h, r_j))` and `c = R a`.
pub fn attend(
    g: &mut Graph,
    params: &ModelParams,
    hidden: Var,
    columns: &Rc<[Var]>,
) -> Result<(Var, Var)> {
    if columns.is_empty() {
        return Err(Error::EmptySentence);
    }
    let width = g.len(columns[0]);
    if g.len(hidden) != width {
        return Err(Error::DimensionMismatch(format!(
            "attention query width {} != column width {width}",
            g.len(hidden)
        )));
    }
    let scores: Vec<Var> = match params.config.attention {
        AttentionKind::Dot => columns.iter().map(|&r| g.dot(hidden, r)).collect(),
        AttentionKind::Mlp => {
            let mlp = params.ids.attention.ok_or_else(|| {
                Error::DimensionMismatch("MLP attention without attention weights".into())
            })?;
            columns
                .iter()
                .map(|&r| {
                    let hr = g.concat(&[hidden, r]);
                    let pre = g.affine(mlp.w1, None, hr);
                    let act = g.tanh(pre);
                    g.affine(mlp.w2, None, act)
                })
                .collect()
        }
    };
    let alpha = g.concat(&scores);
    let a = g.softmax(alpha);
    let c = g.weighted_sum(Rc::clone(columns), a);
    Ok((a, c))
}

/// Decoder recurrent state on a graph.
#[derive(Debug, Clone, Copy)]
pub struct DecoderVars {
    pub hidden: Var,
    pub cell: Var,
    pub context: Var,
}

impl DecoderVars {
    /// `h_0 = r_{|F|+1}`, zero cell and zero context.
    pub fn initial(g: &mut Graph, encoded: &EncodedVars) -> Self {
        let d = g.len(encoded.init);
        Self {
            hidden: encoded.init,
            cell: g.input(vec![0.0; d]),
            context: g.input(vec![0.0; d]),
        }
    }
}

/// One decoder step. Returns the new state, the output logits (including
/// the lexicon term `log(L_F a + epsilon)` when a lexicon is given) and
/// the attention vector.
pub fn decoder_step(
    g: &mut Graph,
    params: &ModelParams,
    prev_word: u32,
    state: &DecoderVars,
    columns: &Rc<[Var]>,
    lexicon: Option<(&Arc<LexiconMatrix>, f64)>,
) -> Result<(DecoderVars, Var, Var)> {
    let vocab = params.config.tgt_vocab_size;
    if prev_word as usize >= vocab {
        return Err(Error::DimensionMismatch(format!(
            "target id {prev_word} outside vocabulary of {vocab}"
        )));
    }
    let ids = &params.ids;
    let emb = g.embed(ids.tgt_embed, prev_word as usize);
    let x = g.concat(&[emb, state.context]);
    let (hidden, cell) = lstm_step(g, &ids.dec, x, state.hidden, state.cell)?;
    let (a, context) = attend(g, params, hidden, columns)?;
    let hc = g.concat(&[hidden, context]);
    let eta = g.affine(ids.eta_w, Some(ids.eta_b), hc);
    let mut logits = g.affine(ids.out_w, Some(ids.out_b), eta);
    if let Some((matrix, eps)) = lexicon {
        if eps.is_nan() || eps <= 0.0 {
            return Err(Error::NonPositiveEpsilon(eps));
        }
        if matrix.rows != vocab || matrix.columns.len() != columns.len() {
            return Err(Error::DimensionMismatch(format!(
                "lexicon matrix is {}x{}, expected {vocab}x{}",
                matrix.rows,
                matrix.columns.len(),
                columns.len()
            )));
        }
        let bias = g.lex_log(Arc::clone(matrix), a, eps);
        logits = g.add(logits, bias);
    }
    Ok((
        DecoderVars {
            hidden,
            cell,
            context,
        },
        logits,
        a,
    ))
}

/// Encoder output as plain values, for inference.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    /// `R`, one entry per source word, each `2H` wide.
    pub columns: Vec<Vec<f64>>,
    /// `r_{|F|+1}`.
    pub init_state: Vec<f64>,
}

/// Decoder hidden vector, LSTM cell and previous context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    pub context: Vec<f64>,
}

/// Everything computed once per source sentence.
#[derive(Debug, Clone)]
pub struct PreparedSource {
    pub encoder: EncoderOutput,
    pub lexicon: Option<Arc<LexiconMatrix>>,
}

/// A parameter set with its (optional) lexicon bias: the unit that is
/// decoded, sampled from and ensembled.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub lexicon: Option<LexiconBias>,
}

impl Model {
    pub fn new(params: ModelParams, lexicon: Option<LexiconBias>) -> Self {
        Self { params, lexicon }
    }

    pub fn tgt_vocab_size(&self) -> usize {
        self.params.config.tgt_vocab_size
    }

    fn lexicon_matrix(&self, source: &[u32]) -> Option<Arc<LexiconMatrix>> {
        self.lexicon.as_ref().map(|lex| {
            Arc::new(build_lexicon_matrix(
                source,
                &lex.table,
                self.params.config.tgt_vocab_size,
            ))
        })
    }

    fn epsilon(&self) -> f64 {
        self.lexicon.as_ref().map_or(0.0, |l| l.epsilon)
    }

    pub fn prepare(&self, source: &[u32]) -> Result<PreparedSource> {
        let mut g = Graph::new(&self.params.store);
        let enc = encode(&mut g, &self.params, source)?;
        let encoder = EncoderOutput {
            columns: enc.columns.iter().map(|&c| g.value(c).to_vec()).collect(),
            init_state: g.value(enc.init).to_vec(),
        };
        Ok(PreparedSource {
            encoder,
            lexicon: self.lexicon_matrix(source),
        })
    }

    pub fn initial_state(&self, prepared: &PreparedSource) -> DecoderState {
        let d = prepared.encoder.init_state.len();
        DecoderState {
            hidden: prepared.encoder.init_state.clone(),
            cell: vec![0.0; d],
            context: vec![0.0; d],
        }
    }

    /// Next-word distribution after feeding `prev_word`.
    pub fn step(
        &self,
        prepared: &PreparedSource,
        state: &DecoderState,
        prev_word: u32,
    ) -> Result<(DecoderState, Vec<f64>)> {
        let (state, logits, _) = self.step_logits(prepared, state, prev_word)?;
        Ok((state, softmax(&logits)))
    }

    /// Like [`Model::step`] but returns raw logits and the attention vector.
    pub fn step_logits(
        &self,
        prepared: &PreparedSource,
        state: &DecoderState,
        prev_word: u32,
    ) -> Result<(DecoderState, Vec<f64>, Vec<f64>)> {
        let d = self.params.config.decoder_dim();
        if state.hidden.len() != d || state.cell.len() != d || state.context.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "decoder state must be {d} wide"
            )));
        }
        let mut g = Graph::new(&self.params.store);
        let columns: Rc<[Var]> = prepared
            .encoder
            .columns
            .iter()
            .map(|c| g.input(c.clone()))
            .collect();
        let vars = DecoderVars {
            hidden: g.input(state.hidden.clone()),
            cell: g.input(state.cell.clone()),
            context: g.input(state.context.clone()),
        };
        let lex = prepared.lexicon.as_ref().map(|m| (m, self.epsilon()));
        let (next, logits, a) =
            decoder_step(&mut g, &self.params, prev_word, &vars, &columns, lex)?;
        let state = DecoderState {
            hidden: g.value(next.hidden).to_vec(),
            cell: g.value(next.cell).to_vec(),
            context: g.value(next.context).to_vec(),
        };
        Ok((state, g.value(logits).to_vec(), g.value(a).to_vec()))
    }

    /// Records `log p(target | source)` for each target (each must end in
    /// `<s>`) on `g`, sharing one encoder pass.
    pub fn logprob_graph(
        &self,
        g: &mut Graph,
        source: &[u32],
        targets: &[Vec<u32>],
    ) -> Result<Vec<Var>> {
        let enc = encode(g, &self.params, source)?;
        let matrix = self.lexicon_matrix(source);
        let lex = matrix.as_ref().map(|m| (m, self.epsilon()));
        let mut out = Vec::with_capacity(targets.len());
        for target in targets {
            if target.is_empty() {
                return Err(Error::EmptySentence);
            }
            let mut state = DecoderVars::initial(g, &enc);
            let mut prev = Vocabulary::END_ID;
            let mut terms = Vec::with_capacity(target.len());
            for &word in target {
                let (next, logits, _) =
                    decoder_step(g, &self.params, prev, &state, &enc.columns, lex)?;
                let logp = g.log_softmax(logits);
                terms.push(g.pick(logp, word as usize));
                state = next;
                prev = word;
            }
            out.push(g.sum(&terms));
        }
        Ok(out)
    }
}

/// Teacher-forced `log p(E | F)`. With several models each step uses the
/// arithmetic mean of their distributions. `target` must end with `<s>`.
pub fn sentence_logprob(models: &[&Model], source: &[u32], target: &[u32]) -> Result<f64> {
    if models.is_empty() {
        return Err(Error::InvalidArgument("no models given".into()));
    }
    if target.last() != Some(&Vocabulary::END_ID) {
        return Err(Error::InvalidArgument("target must end with <s>".into()));
    }
    let prepared: Vec<PreparedSource> = models
        .iter()
        .map(|m| m.prepare(source))
        .collect::<Result<_>>()?;
    let mut states: Vec<DecoderState> = models
        .iter()
        .zip(&prepared)
        .map(|(m, p)| m.initial_state(p))
        .collect();
    let mut prev = Vocabulary::END_ID;
    let mut total = 0.0;
    for &word in target {
        if models.len() == 1 {
            let (state, logits, _) = models[0].step_logits(&prepared[0], &states[0], prev)?;
            let logp = log_softmax(&logits);
            total += logp.get(word as usize).copied().ok_or_else(|| {
                Error::DimensionMismatch(format!("target id {word} outside vocabulary"))
            })?;
            states[0] = state;
        } else {
            let mut mean = vec![0.0; models[0].tgt_vocab_size()];
            for (k, model) in models.iter().enumerate() {
                let (state, probs) = model.step(&prepared[k], &states[k], prev)?;
                if probs.len() != mean.len() {
                    return Err(Error::DimensionMismatch(
                        "ensemble members have different target vocabularies".into(),
                    ));
                }
                for (m, p) in mean.iter_mut().zip(probs) {
                    *m += p;
                }
                states[k] = state;
            }
            let p = mean.get(word as usize).copied().ok_or_else(|| {
                Error::DimensionMismatch(format!("target id {word} outside vocabulary"))
            })?;
            total += (p / models.len() as f64).ln();
        }
        prev = word;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::LexiconTable;
    use crate::autodiff::{ParamStore, Tensor};
    use crate::model::{AttentionKind, ModelConfig};
    use std::collections::BTreeMap;

    fn tiny(attention: AttentionKind, seed: u64) -> ModelParams {
        let mut c = ModelConfig::new(9, 8);
        c.embed_dim = 3;
        c.hidden_dim = 2;
        c.attention_dim = 3;
        c.attention = attention;
        ModelParams::random(c, 0.5, seed).unwrap()
    }

    fn zero_lstm(input: usize, hidden: usize) -> (ParamStore, LstmParams) {
        let mut s = ParamStore::new();
        let w = s.add("w", Tensor::zeros(3 * hidden, input + hidden));
        let b = s.add("b", Tensor::zeros(3 * hidden, 1));
        (s, LstmParams::new(w, b, hidden))
    }

    #[test]
    fn lstm_zero_params_halves_cell() {
        let (s, lstm) = zero_lstm(2, 3);
        let mut g = Graph::new(&s);
        let x = g.input(vec![0.7, -1.2]);
        let h = g.input(vec![0.1, 0.2, 0.3]);
        let c = g.input(vec![1.0, -2.0, 0.4]);
        let (h2, c2) = lstm_step(&mut g, &lstm, x, h, c).unwrap();
        for (k, &cv) in [1.0f64, -2.0, 0.4].iter().enumerate() {
            assert!((g.value(c2)[k] - 0.5 * cv).abs() < 1e-15);
            assert!((g.value(h2)[k] - 0.5 * (0.5 * cv).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn lstm_zero_fixed_point() {
        let (s, lstm) = zero_lstm(2, 2);
        let mut g = Graph::new(&s);
        let x = g.input(vec![0.0; 2]);
        let h = g.input(vec![0.0; 2]);
        let c = g.input(vec![0.0; 2]);
        let (h2, c2) = lstm_step(&mut g, &lstm, x, h, c).unwrap();
        assert_eq!(g.value(h2), &[0.0, 0.0]);
        assert_eq!(g.value(c2), &[0.0, 0.0]);
    }

    #[test]
    fn lstm_gates_are_coupled() {
        let p = tiny(AttentionKind::Dot, 3);
        let lstm = p.ids.enc_fwd;
        let mut g = Graph::new(&p.store);
        let x = g.input(vec![0.3, -0.1, 0.8]);
        let h = g.input(vec![0.5, -0.5]);
        let c = g.input(vec![0.2, 0.9]);
        let (_, c2) = lstm_step(&mut g, &lstm, x, h, c).unwrap();
        // recompute i and the candidate by hand; c' must be the convex mix
        let w = p.store.get(lstm.w);
        let xh = [0.3, -0.1, 0.8, 0.5, -0.5];
        let pre = |r: usize| w.row(r).iter().zip(&xh).map(|(a, b)| a * b).sum::<f64>();
        for k in 0..2 {
            let i = 1.0 / (1.0 + (-pre(k)).exp());
            let f = 1.0 - i;
            assert!((i + f - 1.0).abs() < 1e-15);
            let cand = pre(4 + k).tanh();
            let expect = f * [0.2, 0.9][k] + i * cand;
            assert!((g.value(c2)[k] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn lstm_dimension_mismatch() {
        let (s, lstm) = zero_lstm(2, 2);
        let mut g = Graph::new(&s);
        let x = g.input(vec![0.0; 3]);
        let h = g.input(vec![0.0; 2]);
        let c = g.input(vec![0.0; 2]);
        assert!(matches!(
            lstm_step(&mut g, &lstm, x, h, c),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn encoder_shapes_and_zero_fixed_point() {
        let p = tiny(AttentionKind::Dot, 1);
        let m = Model::new(p.clone(), None);
        let out = m.prepare(&[3, 4]).unwrap();
        assert_eq!(out.encoder.columns.len(), 2);
        assert!(out.encoder.columns.iter().all(|c| c.len() == 4));
        assert_eq!(out.encoder.init_state.len(), 4);

        let z = Model::new(ModelParams::zeros(p.config).unwrap(), None);
        let out = z.prepare(&[3, 4, 5]).unwrap();
        assert!(out.encoder.columns.iter().flatten().all(|&x| x == 0.0));

        assert!(matches!(m.prepare(&[]), Err(Error::EmptySentence)));
        assert!(m.prepare(&[99]).is_err());
    }

    #[test]
    fn palindrome_symmetry() {
        let mut p = tiny(AttentionKind::Dot, 5);
        // the backward LSTM shares the forward LSTM's weights
        let fw = p.store.get(p.ids.enc_fwd.w).clone();
        let fb = p.store.get(p.ids.enc_fwd.b).clone();
        *p.store.get_mut(p.ids.enc_bwd.w) = fw;
        *p.store.get_mut(p.ids.enc_bwd.b) = fb;
        let m = Model::new(p, None);
        let src = [3, 5, 7, 5, 3];
        let out = m.prepare(&src).unwrap();
        let n = src.len();
        for j in 0..n {
            let fwd_half = &out.encoder.columns[j][2..];
            let bwd_half = &out.encoder.columns[n - 1 - j][..2];
            for (a, b) in fwd_half.iter().zip(bwd_half) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    fn attend_values(p: &ModelParams, h: Vec<f64>, cols: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
        let mut g = Graph::new(&p.store);
        let h = g.input(h);
        let columns: Rc<[Var]> = cols.iter().map(|c| g.input(c.clone())).collect();
        let (a, c) = attend(&mut g, p, h, &columns).unwrap();
        (g.value(a).to_vec(), g.value(c).to_vec())
    }

    #[test]
    fn attention_single_column() {
        for kind in [AttentionKind::Dot, AttentionKind::Mlp] {
            let p = tiny(kind, 2);
            let (a, c) = attend_values(&p, vec![0.3, -0.2, 1.0, 0.5], &[vec![1.0, 2.0, 3.0, 4.0]]);
            assert_eq!(a, vec![1.0]);
            assert_eq!(c, vec![1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn attention_uniform_when_scores_equal() {
        let p = tiny(AttentionKind::Dot, 2);
        // orthogonal query gives zero scores everywhere
        let cols = vec![
            vec![0.0, 1.0, 0.0, 2.0],
            vec![0.0, 3.0, 0.0, -1.0],
            vec![0.0; 4],
        ];
        let (a, c) = attend_values(&p, vec![1.0, 0.0, 1.0, 0.0], &cols);
        for x in &a {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((c[1] - 4.0 / 3.0).abs() < 1e-12);
        assert!((c[3] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dot_attention_prefers_matching_column() {
        let p = tiny(AttentionKind::Dot, 2);
        let r1 = vec![3.0, -2.0, 4.0, 1.0];
        let r2 = vec![0.5, 0.5, -0.5, 0.2];
        let (a, _) = attend_values(&p, r1.clone(), &[r1.clone(), r2.clone()]);
        let s1: f64 = r1.iter().map(|x| x * x).sum();
        let s2: f64 = r1.iter().zip(&r2).map(|(x, y)| x * y).sum();
        let z = s1.exp() + s2.exp();
        assert!(a[0] > a[1]);
        assert!((a[0] - s1.exp() / z).abs() < 1e-12);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_dimension_mismatch() {
        let p = tiny(AttentionKind::Dot, 2);
        let mut g = Graph::new(&p.store);
        let h = g.input(vec![1.0; 3]);
        let columns: Rc<[Var]> = vec![g.input(vec![1.0; 4])].into();
        assert!(attend(&mut g, &p, h, &columns).is_err());
    }

    #[test]
    fn zero_softmax_gives_uniform() {
        let mut p = tiny(AttentionKind::Mlp, 4);
        for id in [p.ids.out_w, p.ids.out_b] {
            p.store.get_mut(id).data.fill(0.0);
        }
        let m = Model::new(p, None);
        let prep = m.prepare(&[2, 3]).unwrap();
        let (_, probs) = m.step(&prep, &m.initial_state(&prep), 0).unwrap();
        for x in probs {
            assert!((x - 1.0 / 8.0).abs() < 1e-15);
        }
    }

    fn table(entries: Vec<(u32, Vec<(u32, f64)>)>) -> LexiconTable {
        LexiconTable::from_entries(entries.into_iter().collect::<BTreeMap<_, _>>()).unwrap()
    }

    #[test]
    fn uniform_lexicon_changes_nothing() {
        let p = tiny(AttentionKind::Dot, 6);
        let uniform: Vec<(u32, f64)> = (0..8).map(|e| (e, 1.0 / 8.0)).collect();
        let lex = table(vec![(2, uniform.clone()), (3, uniform)]);
        let plain = Model::new(p.clone(), None);
        let biased = Model::new(p, Some(LexiconBias::new(lex, 1e-6).unwrap()));
        let src = [2, 3, 2];
        let (pp, bp) = (plain.prepare(&src).unwrap(), biased.prepare(&src).unwrap());
        let (mut s1, mut s2) = (plain.initial_state(&pp), biased.initial_state(&bp));
        for w in [0, 4, 5] {
            let (n1, a) = plain.step(&pp, &s1, w).unwrap();
            let (n2, b) = biased.step(&bp, &s2, w).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
            (s1, s2) = (n1, n2);
        }
    }

    #[test]
    fn one_hot_lexicon_forces_argmax() {
        let mut p = tiny(AttentionKind::Dot, 7);
        for id in [p.ids.out_w, p.ids.out_b] {
            p.store.get_mut(id).data.fill(0.0);
        }
        let lex = table(vec![(4, vec![(6, 1.0)])]);
        let m = Model::new(p, Some(LexiconBias::new(lex, 1e-6).unwrap()));
        let prep = m.prepare(&[4]).unwrap();
        let (_, probs) = m.step(&prep, &m.initial_state(&prep), 0).unwrap();
        let argmax = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(argmax, 6);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_epsilon_rejected_in_step() {
        let p = tiny(AttentionKind::Dot, 7);
        let mut g = Graph::new(&p.store);
        let enc = encode(&mut g, &p, &[2]).unwrap();
        let st = DecoderVars::initial(&mut g, &enc);
        let m = Arc::new(build_lexicon_matrix(&[2], &LexiconTable::default(), 8));
        let r = decoder_step(&mut g, &p, 0, &st, &enc.columns, Some((&m, 0.0)));
        assert!(matches!(r, Err(Error::NonPositiveEpsilon(_))));
    }

    #[test]
    fn uniform_model_logprob() {
        let mut c = ModelConfig::new(6, 8);
        c.embed_dim = 2;
        c.hidden_dim = 2;
        let m = Model::new(ModelParams::zeros(c).unwrap(), None);
        let lp = sentence_logprob(&[&m], &[2, 3], &[4, 5, 0]).unwrap();
        assert!((lp + 3.0 * 8f64.ln()).abs() < 1e-12);
        assert!(sentence_logprob(&[&m], &[2], &[4, 5]).is_err());
    }

    #[test]
    fn identical_ensemble_matches_single() {
        let m = Model::new(tiny(AttentionKind::Mlp, 8), None);
        let single = sentence_logprob(&[&m], &[2, 3, 4], &[5, 6, 0]).unwrap();
        let triple = sentence_logprob(&[&m, &m, &m], &[2, 3, 4], &[5, 6, 0]).unwrap();
        assert!((single - triple).abs() < 1e-12);
    }

    #[test]
    fn graph_logprob_matches_step_api() {
        for kind in [AttentionKind::Dot, AttentionKind::Mlp] {
            let lex = table(vec![(2, vec![(5, 0.6), (6, 0.3)]), (4, vec![(0, 0.9)])]);
            let m = Model::new(tiny(kind, 9), Some(LexiconBias::new(lex, 1e-4).unwrap()));
            let src = [2, 3, 4];
            let targets = vec![vec![5, 6, 0], vec![7, 0]];
            let mut g = Graph::new(&m.params.store);
            let vars = m.logprob_graph(&mut g, &src, &targets).unwrap();
            for (v, t) in vars.iter().zip(&targets) {
                let direct = sentence_logprob(&[&m], &src, t).unwrap();
                assert!((g.scalar(*v) - direct).abs() < 1e-12);
            }
        }
    }
}
