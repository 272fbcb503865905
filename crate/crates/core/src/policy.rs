//! Autoregressive token policy: a single-layer gated recurrent cell over
//! token embeddings, masked softmax output, and hand-written
//! backpropagation through time for score-function gradients.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::formula::{Grammar, RpnProgram, StackState, Token, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyConfig {
    pub embed: usize,
    pub hidden: usize,
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            embed: 32,
            hidden: 64,
            init_scale: 0.08,
        }
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    v: usize,
    e: usize,
    h: usize,
    emb: usize,
    wz: usize,
    wr: usize,
    wn: usize,
    uz: usize,
    ur: usize,
    un: usize,
    bz: usize,
    br: usize,
    bn: usize,
    wo: usize,
    bo: usize,
    total: usize,
}

impl Layout {
    fn new(v: usize, e: usize, h: usize) -> Self {
        let emb = 0;
        let wz = emb + v * e;
        let wr = wz + h * e;
        let wn = wr + h * e;
        let uz = wn + h * e;
        let ur = uz + h * h;
        let un = ur + h * h;
        let bz = un + h * h;
        let br = bz + h;
        let bn = br + h;
        let wo = bn + h;
        let bo = wo + v * h;
        Self {
            v,
            e,
            h,
            emb,
            wz,
            wr,
            wn,
            uz,
            ur,
            un,
            bz,
            br,
            bn,
            wo,
            bo,
            total: bo + v,
        }
    }
}

/// `out = W x + b` for row-major `W` of shape `[out.len() x x.len()]`.
fn affine(w: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(n)) {
        *o += dot(row, x);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += Wᵀ d`.
fn affine_t(w: &[f64], d: &[f64], out: &mut [f64]) {
    let n = out.len();
    for (di, row) in d.iter().zip(w.chunks_exact(n)) {
        if *di != 0.0 {
            for (o, a) in out.iter_mut().zip(row) {
                *o += di * a;
            }
        }
    }
}

/// `G += d xᵀ`.
fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let n = x.len();
    for (di, row) in d.iter().zip(g.chunks_exact_mut(n)) {
        if *di != 0.0 {
            for (o, a) in row.iter_mut().zip(x) {
                *o += di * a;
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Softmax restricted to `mask`; illegal entries get probability 0.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(l, _)| *l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::Data("legality mask has no legal token".into()));
    }
    let mut p: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(l, m)| if *m { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = p.iter().sum();
    for x in &mut p {
        *x /= sum;
    }
    Ok(p)
}

/// Activations of one recurrent step, kept for backpropagation.
struct StepCache {
    input: usize,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h: Vec<f64>,
    probs: Vec<f64>,
}

/// One sampled or greedy program with its per-step log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Token ids, `Begin` first and `Sep` last.
    pub ids: Vec<usize>,
    pub program: RpnProgram,
    /// `log π(a_t | a_<t)` for each emitted token after `Begin`.
    pub log_probs: Vec<f64>,
    pub masks: Vec<Vec<bool>>,
    pub reward: Option<f64>,
}

impl Rollout {
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct Policy {
    vocab: Arc<Vocabulary>,
    grammar: Arc<Grammar>,
    config: PolicyConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl Policy {
    /// Uniform(−scale, scale) initialization of every parameter.
    pub fn new(vocab: Vocabulary, max_len: usize, config: PolicyConfig, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(vocab, max_len, config);
        let s = config.init_scale;
        for x in &mut p.params {
            *x = rng.random_range(-s..=s);
        }
        p
    }

    pub fn zeros(vocab: Vocabulary, max_len: usize, config: PolicyConfig) -> Self {
        let grammar = Arc::new(Grammar::for_vocab(&vocab, max_len));
        let layout = Layout::new(vocab.len(), config.embed, config.hidden);
        Self {
            vocab: Arc::new(vocab),
            grammar,
            config,
            params: vec![0.0; layout.total],
            layout,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Range of the output-projection weights and biases.
    pub fn output_layer(&self) -> std::ops::Range<usize> {
        self.layout.wo..self.layout.total
    }

    fn step(&self, input: usize, h_prev: &[f64]) -> StepCache {
        let Layout { e, h, .. } = self.layout;
        let l = &self.layout;
        let p = &self.params;
        let x = &p[l.emb + input * e..l.emb + (input + 1) * e];
        let gate = |w: usize, u: usize, b: usize, hin: &[f64]| {
            let mut a = p[b..b + h].to_vec();
            affine(&p[w..w + h * e], x, &mut a);
            affine(&p[u..u + h * h], hin, &mut a);
            a
        };
        let z: Vec<f64> = gate(l.wz, l.uz, l.bz, h_prev).into_iter().map(sigmoid).collect();
        let r: Vec<f64> = gate(l.wr, l.ur, l.br, h_prev).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = gate(l.wn, l.un, l.bn, &rh).into_iter().map(f64::tanh).collect();
        let hn: Vec<f64> = (0..h).map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i]).collect();
        StepCache {
            input,
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            h: hn,
            probs: Vec::new(),
        }
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let mut out = self.params[l.bo..l.bo + l.v].to_vec();
        affine(&self.params[l.wo..l.wo + l.v * l.h], h, &mut out);
        out
    }

    /// Next-token distribution after `prefix` (token ids starting with
    /// `Begin`), restricted to `mask`.
    pub fn distribution(&self, prefix: &[usize], mask: &[bool]) -> Result<Vec<f64>> {
        let mut h = vec![0.0; self.layout.h];
        for &id in prefix {
            h = self.step(id, &h).h;
        }
        masked_softmax(&self.logits(&h), mask)
    }

    fn mask_for(&self, state: &StackState) -> Vec<bool> {
        self.grammar
            .legal_actions(&self.vocab, state, self.grammar.budget(state))
    }

    fn decode(&self, mut choose: impl FnMut(&[f64]) -> usize) -> Rollout {
        let mut ids = vec![Vocabulary::BEGIN];
        let mut state = StackState::initial();
        let mut h = vec![0.0; self.layout.h];
        let mut log_probs = Vec::new();
        let mut masks = Vec::new();
        while !state.is_complete() {
            let cache = self.step(*ids.last().unwrap(), &h);
            let mask = self.mask_for(&state);
            let probs = masked_softmax(&self.logits(&cache.h), &mask)
                .expect("grammar always leaves a legal token");
            let a = choose(&probs);
            log_probs.push(probs[a].ln());
            state = state
                .successor(&self.vocab.token(a))
                .expect("masked token is well typed");
            ids.push(a);
            masks.push(mask);
            h = cache.h;
        }
        let tokens: Vec<Token> = ids.iter().map(|&i| self.vocab.token(i)).collect();
        let program = RpnProgram::parse_with(&tokens, &self.grammar).expect("masked decoding yields a valid program");
        Rollout {
            ids,
            program,
            log_probs,
            masks,
            reward: None,
        }
    }

    pub fn sample_rollout(&self, rng: &mut impl Rng) -> Rollout {
        self.decode(|probs| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut last = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > 0.0 {
                    acc += p;
                    last = i;
                    if u < acc {
                        return i;
                    }
                }
            }
            last
        })
    }

    /// Argmax decoding, ties to the lowest token id.
    pub fn greedy_rollout(&self) -> Rollout {
        self.decode(|probs| {
            let mut best = 0;
            for (i, p) in probs.iter().enumerate() {
                if *p > probs[best] {
                    best = i;
                }
            }
            best
        })
    }

    /// `Σ_t log π(a_t | a_<t)` of a token-id sequence under current params.
    pub fn sequence_log_prob(&self, ids: &[usize]) -> Result<f64> {
        Ok(self.forward(ids)?.iter().zip(&ids[1..]).map(|(c, &a)| c.probs[a].ln()).sum())
    }

    fn forward(&self, ids: &[usize]) -> Result<Vec<StepCache>> {
        let tokens: Vec<Token> = ids.iter().map(|&i| self.vocab.token(i)).collect();
        let mut state = StackState::from_prefix(&tokens[..1])
            .ok_or_else(|| Error::Data("rollout must start with BEG".into()))?;
        let mut h = vec![0.0; self.layout.h];
        let mut caches = Vec::with_capacity(ids.len());
        for (t, (&input, token)) in ids.iter().zip(&tokens[1..]).enumerate() {
            let mut cache = self.step(input, &h);
            let mask = self.mask_for(&state);
            cache.probs = masked_softmax(&self.logits(&cache.h), &mask)?;
            if cache.probs[ids[t + 1]] == 0.0 {
                return Err(Error::IllegalToken {
                    index: t + 1,
                    token: token.to_string(),
                    stack: state.stack.clone(),
                });
            }
            state = state.successor(token).expect("legal token");
            h = cache.h.clone();
            caches.push(cache);
        }
        Ok(caches)
    }

    /// `grad += coeff · ∇θ Σ_t log π(a_t | a_<t)` by backpropagation through
    /// time.
    pub fn accumulate_score_gradient(&self, rollout: &Rollout, coeff: f64, grad: &mut [f64]) -> Result<()> {
        self.accumulate_ids(&rollout.ids, coeff, grad)
    }

    pub fn accumulate_ids(&self, ids: &[usize], coeff: f64, grad: &mut [f64]) -> Result<()> {
        assert_eq!(grad.len(), self.params.len());
        if coeff == 0.0 {
            return Ok(());
        }
        let caches = self.forward(ids)?;
        let l = self.layout;
        let (e, h) = (l.e, l.h);
        let p = &self.params;
        let mut dh_next = vec![0.0; h];
        let mut dlogits = vec![0.0; l.v];
        for t in (0..caches.len()).rev() {
            let c = &caches[t];
            let action = ids[t + 1];
            for (i, d) in dlogits.iter_mut().enumerate() {
                *d = -coeff * c.probs[i];
            }
            dlogits[action] += coeff;
            outer_acc(&mut grad[l.wo..l.wo + l.v * h], &dlogits, &c.h);
            for (g, d) in grad[l.bo..l.bo + l.v].iter_mut().zip(&dlogits) {
                *g += d;
            }
            let mut dh = dh_next.clone();
            affine_t(&p[l.wo..l.wo + l.v * h], &dlogits, &mut dh);

            let mut dh_prev: Vec<f64> = dh.iter().zip(&c.z).map(|(d, z)| d * z).collect();
            let da_n: Vec<f64> = (0..h).map(|i| dh[i] * (1.0 - c.z[i]) * (1.0 - c.n[i] * c.n[i])).collect();
            let da_z: Vec<f64> = (0..h)
                .map(|i| dh[i] * (c.h_prev[i] - c.n[i]) * c.z[i] * (1.0 - c.z[i]))
                .collect();
            let rh: Vec<f64> = c.r.iter().zip(&c.h_prev).map(|(a, b)| a * b).collect();
            let mut drh = vec![0.0; h];
            affine_t(&p[l.un..l.un + h * h], &da_n, &mut drh);
            let da_r: Vec<f64> = (0..h)
                .map(|i| drh[i] * c.h_prev[i] * c.r[i] * (1.0 - c.r[i]))
                .collect();
            for i in 0..h {
                dh_prev[i] += drh[i] * c.r[i];
            }
            affine_t(&p[l.uz..l.uz + h * h], &da_z, &mut dh_prev);
            affine_t(&p[l.ur..l.ur + h * h], &da_r, &mut dh_prev);

            let x = &p[l.emb + c.input * e..l.emb + (c.input + 1) * e];
            let mut dx = vec![0.0; e];
            for (w, u, b, da, hin) in [
                (l.wz, l.uz, l.bz, &da_z, &c.h_prev),
                (l.wr, l.ur, l.br, &da_r, &c.h_prev),
                (l.wn, l.un, l.bn, &da_n, &rh),
            ] {
                outer_acc(&mut grad[w..w + h * e], da, x);
                outer_acc(&mut grad[u..u + h * h], da, hin);
                for (g, d) in grad[b..b + h].iter_mut().zip(da) {
                    *g += d;
                }
                affine_t(&p[w..w + h * e], da, &mut dx);
            }
            for (g, d) in grad[l.emb + c.input * e..l.emb + (c.input + 1) * e].iter_mut().zip(&dx) {
                *g += d;
            }
            if dh_prev.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "policy gradient",
                    step: t,
                });
            }
            dh_next = dh_prev;
        }
        Ok(())
    }

    fn header(&self) -> String {
        let vocab: Vec<String> = self.vocab.tokens().iter().map(|t| t.to_string()).collect();
        format!(
            "factorlab-policy 1\nvocab {}\nembed {}\nhidden {}\nmax_len {}\n",
            vocab.join(" "),
            self.config.embed,
            self.config.hidden,
            self.grammar.max_len()
        )
    }

    /// Text checkpoint: header, config hash, then one parameter per line.
    /// `f64` display output parses back to the identical value.
    pub fn save(&self, path: impl AsRef<Path>, config_hash: &str) -> Result<()> {
        let mut out = self.header();
        let _ = writeln!(out, "config_hash {config_hash}");
        let _ = writeln!(out, "params {}", self.params.len());
        for v in &self.params {
            let _ = writeln!(out, "{v}");
        }
        let path = path.as_ref();
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Loads parameters saved by [`Policy::save`] into a policy with the
    /// same vocabulary and shape. Returns the stored config hash.
    pub fn load(&mut self, path: impl AsRef<Path>) -> Result<String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let header = self.header();
        let rest = text
            .strip_prefix(header.as_str())
            .ok_or_else(|| Error::Checkpoint("checkpoint shape or vocabulary differs".into()))?;
        let mut lines = rest.lines();
        let hash = lines
            .next()
            .and_then(|l| l.strip_prefix("config_hash "))
            .ok_or_else(|| Error::Checkpoint("missing config hash".into()))?
            .to_string();
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("params "))
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing parameter count".into()))?;
        if count != self.params.len() {
            return Err(Error::Checkpoint("parameter count differs".into()));
        }
        let values = lines
            .map(|l| l.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect::<Option<Vec<f64>>>()
            .ok_or_else(|| Error::Checkpoint("bad parameter value".into()))?;
        if values.len() != count {
            return Err(Error::Checkpoint("truncated parameter list".into()));
        }
        self.params = values;
        Ok(hash)
    }
}
