//! Attention-only (disentangled) transformer: forward semantics with relative
//! positional encodings, plus the explicit three-layer weight construction
//! that reproduces the one-step mirror-descent estimator.
//!
//! The architecture replaces residual addition with concatenation, uses a
//! single attention matrix per head, and injects relative positional
//! encodings both into the scores (`R_A`) and into the values (`R_V`):
//!
//! ```text
//! e_ij = h_iᵀ W_A h_j + h_iᵀ (R_A)_{i-j+1}          (causal softmax over j ≤ i)
//! ĥ_i  = Σ_j A_ij · concat(h_j, (R_V)_{i-j+1})
//! h'_i = concat(h_i, ĥ_i per head)
//! ```
//!
//! The constructed weights make layer 1 compute the posterior lag
//! responsibilities inside its attention pattern, layer 2 average them along
//! the sequence, and layer 3 turn the averages into the softmax mixture
//! estimate, which the output matrix combines with the known transition rows.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::estimators::{one_step_md, LearningRate};
use crate::model::{
    responsibilities, MixtureWeights, ModelConfig, TokenSequence, TransitionMatrix, C_MIN,
};

/// One attention head: content matrix `W_A` (d×d), score RPE table `R_A`
/// (T×d), and value RPE table `R_V` (T×d_R, possibly zero-width).
#[derive(Debug, Clone)]
pub struct LayerWeights {
    pub attn: Array2<f64>,
    pub rpe_attn: Array2<f64>,
    pub rpe_val: Array2<f64>,
}

impl LayerWeights {
    fn validate(&self, t: usize, d_in: usize) -> Result<()> {
        if self.attn.nrows() != d_in || self.attn.ncols() != d_in {
            return Err(Error::DimensionMismatch(format!(
                "attention matrix is {}x{}, expected {d_in}x{d_in}",
                self.attn.nrows(),
                self.attn.ncols()
            )));
        }
        if self.rpe_attn.nrows() != t || self.rpe_attn.ncols() != d_in {
            return Err(Error::DimensionMismatch(format!(
                "score RPE table is {}x{}, expected {t}x{d_in}",
                self.rpe_attn.nrows(),
                self.rpe_attn.ncols()
            )));
        }
        if self.rpe_val.nrows() != t {
            return Err(Error::DimensionMismatch(format!(
                "value RPE table has {} rows, expected {t}",
                self.rpe_val.nrows()
            )));
        }
        Ok(())
    }

    /// Width this head appends to the hidden state.
    fn out_width(&self, d_in: usize) -> usize {
        d_in + self.rpe_val.ncols()
    }
}

/// Full weight set of the three-layer construction.
#[derive(Debug, Clone)]
pub struct ConstructedTransformer {
    pub layers: [LayerWeights; 3],
    pub output: Array2<f64>,
    pub deltas: [f64; 3],
    pub beta: f64,
    pub cfg: ModelConfig,
}

/// Forward-pass record: final prediction, per-layer per-head attention,
/// per-layer hidden states (`hidden[0]` is the one-hot embedding), and the
/// mixture-weight band read from the last layer's final attention row.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub prediction: Vec<f64>,
    pub attention: Vec<Vec<Array2<f64>>>,
    pub hidden: Vec<Array2<f64>>,
    pub lambda_band: Vec<f64>,
}

impl ForwardOutput {
    /// The band renormalized onto the simplex. Under the constructed weights
    /// the off-band attention mass is ~e^(-2δ), so this matches the raw band
    /// to far below any tolerance used here.
    pub fn lambda_readout(&self) -> Result<MixtureWeights> {
        MixtureWeights::from_unnormalized(self.lambda_band.clone())
    }
}

/// Runs the disentangled forward pass. `layers[l]` holds the heads of layer
/// `l + 1`; the hidden state grows by `d + d_R` per head. The final
/// prediction is `W_O · h_T` clamped at zero and renormalized.
pub fn disentangled_forward(
    layers: &[&[LayerWeights]],
    output: &Array2<f64>,
    cfg: &ModelConfig,
    seq: &TokenSequence,
) -> Result<ForwardOutput> {
    let t = cfg.t;
    if seq.len() != t {
        return Err(Error::DimensionMismatch(format!(
            "sequence length {} does not match T = {t}",
            seq.len()
        )));
    }
    if seq.q() != cfg.q {
        return Err(Error::DimensionMismatch(format!(
            "sequence alphabet {} does not match q = {}",
            seq.q(),
            cfg.q
        )));
    }

    // One-hot embedding.
    let mut h = Array2::<f64>::zeros((t, cfg.q));
    for (i, &y) in seq.tokens().iter().enumerate() {
        h[[i, y - 1]] = 1.0;
    }

    let mut hidden = vec![h.clone()];
    let mut attention: Vec<Vec<Array2<f64>>> = Vec::with_capacity(layers.len());

    for heads in layers {
        let d = h.ncols();
        let mut layer_attn = Vec::with_capacity(heads.len());
        let mut head_outputs = Vec::with_capacity(heads.len());
        for head in *heads {
            head.validate(t, d)?;
            let content_active = head.attn.iter().any(|&x| x != 0.0);
            // Content scores h_iᵀ W_A h_j as (H·W_A)·Hᵀ.
            let content = if content_active {
                Some(h.dot(&head.attn).dot(&h.t()))
            } else {
                None
            };
            // rpe_dot[i][k] = h_i · (R_A)_{k+1}; looked up at k = i - j.
            let rpe_dot = h.dot(&head.rpe_attn.t());

            let mut attn = Array2::<f64>::zeros((t, t));
            let mut scores = vec![0.0; t];
            for i in 0..t {
                let mut mx = f64::NEG_INFINITY;
                for j in 0..=i {
                    let mut e = rpe_dot[[i, i - j]];
                    if let Some(c) = &content {
                        e += c[[i, j]];
                    }
                    scores[j] = e;
                    if e > mx {
                        mx = e;
                    }
                }
                let mut sum = 0.0;
                for s in scores[..=i].iter_mut() {
                    *s = (*s - mx).exp();
                    sum += *s;
                }
                for (j, &s) in scores[..=i].iter().enumerate() {
                    attn[[i, j]] = s / sum;
                }
            }

            let d_r = head.rpe_val.ncols();
            let rv_active = d_r > 0 && head.rpe_val.iter().any(|&x| x != 0.0);
            let mut out = Array2::<f64>::zeros((t, d + d_r));
            for i in 0..t {
                let (h_part, rv_part) = out
                    .row_mut(i)
                    .into_slice()
                    .expect("standard layout")
                    .split_at_mut(d);
                for j in 0..=i {
                    let a = attn[[i, j]];
                    if a == 0.0 {
                        continue;
                    }
                    let h_row = h.row(j);
                    let h_row = h_row.as_slice().expect("standard layout");
                    for (acc, &x) in h_part.iter_mut().zip(h_row) {
                        *acc += a * x;
                    }
                    if rv_active {
                        let rv_row = head.rpe_val.row(i - j);
                        let rv_row = rv_row.as_slice().expect("standard layout");
                        for (acc, &x) in rv_part.iter_mut().zip(rv_row) {
                            *acc += a * x;
                        }
                    }
                }
            }
            layer_attn.push(attn);
            head_outputs.push(out);
        }

        let new_d = d + heads.iter().map(|head| head.out_width(d)).sum::<usize>();
        let mut next = Array2::<f64>::zeros((t, new_d));
        next.slice_mut(ndarray::s![.., ..d]).assign(&h);
        let mut offset = d;
        for out in &head_outputs {
            let w = out.ncols();
            next.slice_mut(ndarray::s![.., offset..offset + w])
                .assign(out);
            offset += w;
        }
        attention.push(layer_attn);
        h = next;
        hidden.push(h.clone());
    }

    let d_final = h.ncols();
    if output.ncols() != d_final || output.nrows() != cfg.q {
        return Err(Error::DimensionMismatch(format!(
            "output matrix is {}x{}, expected {}x{d_final}",
            output.nrows(),
            output.ncols(),
            cfg.q
        )));
    }
    let last_state = h.row(t - 1);
    let mut prediction: Vec<f64> = output
        .rows()
        .into_iter()
        .map(|row| row.dot(&last_state))
        .collect();
    // Rounding can leave ~1e-12 residue outside [0, 1]; clamp and renormalize.
    let mut sum = 0.0;
    for p in prediction.iter_mut() {
        *p = p.max(0.0);
        sum += *p;
    }
    if sum > 0.0 {
        for p in prediction.iter_mut() {
            *p /= sum;
        }
    } else {
        prediction = vec![1.0 / cfg.q as f64; cfg.q];
    }

    // λ̃_g sits at key position T-g+1 of the final row: lag g counts back
    // from the next (not yet seen) position T+1.
    let lambda_band = if !attention.is_empty() && !attention.last().unwrap().is_empty() {
        let last_attn = &attention.last().unwrap()[0];
        (1..=cfg.m).map(|g| last_attn[[t - 1, t - g]]).collect()
    } else {
        Vec::new()
    };

    Ok(ForwardOutput {
        prediction,
        attention,
        hidden,
        lambda_band,
    })
}

/// Builds the explicit three-layer weight set for a known transition matrix.
///
/// Layer 1 scores `log π(y_j, y_i)` plus a ±δ₁ band bias restricting
/// attention to lags 1..m, and copies each lag's weight into a dedicated
/// value dimension. Layer 2 applies a -δ₂ bias to relative positions beyond
/// `T-m`, which at the final query averages the stored responsibility vectors
/// over positions m+1..T. Layer 3 biases the final query onto its m lag
/// positions and adds `β·Γ̄_g` to lag g's score, so its attention row is the
/// softmax mixture estimate; the output matrix applies `πᵀ` to the resulting
/// mixture of one-hot token embeddings.
pub fn construct_weights(
    pi: &TransitionMatrix,
    cfg: &ModelConfig,
    deltas: [f64; 3],
    beta: f64,
) -> Result<ConstructedTransformer> {
    let (q, m, t) = (cfg.q, cfg.m, cfg.t);
    if pi.q() != q {
        return Err(Error::DimensionMismatch(format!(
            "pi is {}x{}, config says q = {q}",
            pi.q(),
            pi.q()
        )));
    }
    if pi.min_entry() < C_MIN * (1.0 - 1e-9) {
        return Err(Error::InvalidConfig(format!(
            "transition entries must be at least {C_MIN} so that log pi is bounded"
        )));
    }
    let d1 = 2 * q + m;
    let d2 = 4 * q + 3 * m;

    // Layer 1: W_A = (log π)ᵀ; band bias on lags 1..m; value RPE stores the
    // lag index as a one-hot.
    let mut attn1 = Array2::zeros((q, q));
    for a in 0..q {
        for b in 0..q {
            attn1[[a, b]] = pi.entries()[[b, a]].ln();
        }
    }
    let mut rpe_attn1 = Array2::from_elem((t, q), -deltas[0]);
    for k in 1..=m.min(t - 1) {
        rpe_attn1.row_mut(k).fill(deltas[0]);
    }
    let mut rpe_val1 = Array2::zeros((t, m));
    for k in 1..=m.min(t - 1) {
        rpe_val1[[k, k - 1]] = 1.0;
    }

    // Layer 2: no content scores; relative positions beyond T-m are pushed
    // down via the one-hot block of the residual stream.
    let mut rpe_attn2 = Array2::zeros((t, d1));
    for k in t - m..t {
        for c in 0..q {
            rpe_attn2[[k, c]] = -deltas[1];
        }
    }

    // Layer 3: relative offsets k in [1, m] (key positions T..T-m+1 at the
    // final query) get +δ₃ plus β times the k-th averaged-responsibility
    // coordinate (block offset 4q+m within h²); everything else gets -δ₃.
    let mut rpe_attn3 = Array2::zeros((t, d2));
    for k in 0..t {
        let active = k < m;
        for c in 0..q {
            rpe_attn3[[k, c]] = if active { deltas[2] } else { -deltas[2] };
        }
        if active {
            rpe_attn3[[k, 4 * q + m + k]] = beta;
        }
    }

    // Output: read the first q coordinates of ĥ³ (offset d2) through πᵀ.
    let d3 = 2 * d2;
    let mut output = Array2::zeros((q, d3));
    for a in 0..q {
        for b in 0..q {
            output[[a, d2 + b]] = pi.entries()[[b, a]];
        }
    }

    Ok(ConstructedTransformer {
        layers: [
            LayerWeights {
                attn: attn1,
                rpe_attn: rpe_attn1,
                rpe_val: rpe_val1,
            },
            LayerWeights {
                attn: Array2::zeros((d1, d1)),
                rpe_attn: rpe_attn2,
                rpe_val: Array2::zeros((t, m)),
            },
            LayerWeights {
                attn: Array2::zeros((d2, d2)),
                rpe_attn: rpe_attn3,
                rpe_val: Array2::zeros((t, 0)),
            },
        ],
        output,
        deltas,
        beta,
        cfg: *cfg,
    })
}

impl ConstructedTransformer {
    pub fn forward(&self, seq: &TokenSequence) -> Result<ForwardOutput> {
        let layers: Vec<&[LayerWeights]> = self.layers.iter().map(std::slice::from_ref).collect();
        disentangled_forward(&layers, &self.output, &self.cfg, seq)
    }

    /// The η for which the analytic one-step estimator matches this β:
    /// equating `β/(T-m)·Σγ` with `η·m·Σγ` gives `η = β/(m(T-m))`.
    pub fn equivalent_eta(&self) -> LearningRate {
        LearningRate::new(self.beta / (self.cfg.m as f64 * self.cfg.num_steps() as f64))
            .expect("positive beta")
    }
}

/// Maps a mirror-descent learning rate to the construction's β.
pub fn beta_for_eta(eta: LearningRate, cfg: &ModelConfig) -> f64 {
    eta.value() * cfg.m as f64 * cfg.num_steps() as f64
}

/// Maximum deviations between the forward pass on constructed weights and
/// the analytic quantities it should reproduce.
#[derive(Debug, Clone, Copy)]
pub struct ConstructionReport {
    /// max |A¹_ij - γ_i(i-j)| over the lag band of rows i > m.
    pub layer1_max_dev: f64,
    /// max |λ̃ band - one-step MD at η = β/(m(T-m))|.
    pub lambda_max_dev: f64,
    /// max |prediction - Σ_g λ̃_g π(y_{T+1-g}, ·)|.
    pub prediction_max_dev: f64,
}

impl ConstructionReport {
    pub fn max_dev(&self) -> f64 {
        self.layer1_max_dev
            .max(self.lambda_max_dev)
            .max(self.prediction_max_dev)
    }
}

/// Builds the construction, runs it on `seq`, and reports the deviations
/// from the analytic one-step mirror-descent path.
pub fn verify_construction(
    pi: &TransitionMatrix,
    cfg: &ModelConfig,
    seq: &TokenSequence,
    deltas: [f64; 3],
    beta: f64,
) -> Result<ConstructionReport> {
    let net = construct_weights(pi, cfg, deltas, beta)?;
    let out = net.forward(seq)?;
    let (m, t) = (cfg.m, cfg.t);

    let gamma = responsibilities(pi, &MixtureWeights::uniform(m), seq);
    let attn1 = &out.attention[0][0];
    let mut layer1_max_dev: f64 = 0.0;
    for i in m + 1..=t {
        let row = gamma.row_for(i);
        for g in 1..=m {
            let j = i - g;
            layer1_max_dev = layer1_max_dev.max((attn1[[i - 1, j - 1]] - row[g - 1]).abs());
        }
    }

    let analytic = one_step_md(pi, seq, m, net.equivalent_eta());
    let mut lambda_max_dev: f64 = 0.0;
    for (band, analytic_g) in out.lambda_band.iter().zip(analytic.as_slice()) {
        lambda_max_dev = lambda_max_dev.max((band - analytic_g).abs());
    }

    // The prediction targets the next position T+1, so lag g reads the
    // transition row of y_{T+1-g}.
    let mut expected = vec![0.0; cfg.q];
    for g in 1..=m {
        let from = seq.at(t + 1 - g);
        let w = out.lambda_band[g - 1];
        for (e, &p) in expected.iter_mut().zip(pi.row(from)) {
            *e += w * p;
        }
    }
    let mut prediction_max_dev: f64 = 0.0;
    for (p, e) in out.prediction.iter().zip(&expected) {
        prediction_max_dev = prediction_max_dev.max((p - e).abs());
    }

    Ok(ConstructionReport {
        layer1_max_dev,
        lambda_max_dev,
        prediction_max_dev,
    })
}

/// Structural statistics of the attention maps produced by the construction.
#[derive(Debug, Clone, Copy)]
pub struct AttentionReport {
    /// Minimum over rows i > m of the attention mass on the lag band.
    pub layer1_min_band_mass: f64,
    /// max |A²_Tj - 1/(T-m)| over positions j in m+1..T.
    pub layer2_last_row_max_dev: f64,
    /// Mass of the final layer-3 row on positions T-m..T.
    pub layer3_last_row_band_mass: f64,
}

pub fn attention_report(out: &ForwardOutput, cfg: &ModelConfig) -> Result<AttentionReport> {
    if out.attention.len() != 3 || out.attention.iter().any(|l| l.is_empty()) {
        return Err(Error::InvalidConfig(
            "attention report expects a three-layer single-head forward output".into(),
        ));
    }
    let (m, t) = (cfg.m, cfg.t);
    let a1 = &out.attention[0][0];
    let mut layer1_min_band_mass = f64::INFINITY;
    for i in m + 1..=t {
        let band: f64 = (1..=m).map(|g| a1[[i - 1, i - 1 - g]]).sum();
        layer1_min_band_mass = layer1_min_band_mass.min(band);
    }
    if !layer1_min_band_mass.is_finite() {
        layer1_min_band_mass = f64::NAN;
    }

    let a2 = &out.attention[1][0];
    let target = 1.0 / cfg.num_steps() as f64;
    let mut layer2_last_row_max_dev: f64 = 0.0;
    for j in m + 1..=t {
        layer2_last_row_max_dev = layer2_last_row_max_dev.max((a2[[t - 1, j - 1]] - target).abs());
    }

    let a3 = &out.attention[2][0];
    let layer3_last_row_band_mass: f64 = (t - m..=t).map(|j| a3[[t - 1, j - 1]]).sum();

    Ok(AttentionReport {
        layer1_min_band_mass,
        layer2_last_row_max_dev,
        layer3_last_row_band_mass,
    })
}
