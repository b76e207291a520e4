//! Cross-modal interaction and fusion.
//!
//! Each of the four streams (product text, review text, product image,
//! review image) runs D layers of cross-modal attention: the stream queries
//! the row-wise concatenation of the other three. Layer i computes
//! `T = CM(LN(Q[i−1]), LN(X_η))`, adds the residual `U = T + Q[i−1]`, and
//! maps `Q[i] = GeLU(Linear(U))`. The resulting bundle (H^p, V^p, H^r, V^r)
//! feeds three relation paths — intra-modal (text–text, image–image),
//! inter-modal (text–image across product/review), and intra-review
//! (text–image within product, within review) — whose pooled outputs
//! concatenate into one vector scored by a final linear layer.

use crate::encoders::{SelfAttnParams, LN_EPS};
use crate::init;
use crate::params::{ParamBinding, ParamId, ParamSet};
use crate::tensor::{PoolMode, Result, Tape, TensorId};
use rand::Rng;

/// One cross-modal attention block plus its per-layer machinery: Q/K/V
/// projections, the post-residual linear map, and the two layer-norm
/// parameter sets (one for the query stream, one for the context).
#[derive(Debug, Clone)]
pub struct CmBlockParams {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    linear_w: ParamId,
    linear_b: ParamId,
    ln_q: (ParamId, ParamId),
    ln_ctx: (ParamId, ParamId),
    pub width: usize,
}

impl CmBlockParams {
    pub fn init<R: Rng>(ps: &mut ParamSet, name: &str, d: usize, rng: &mut R) -> Self {
        CmBlockParams {
            wq: ps.add(format!("{name}.wq"), init::uniform_fan_in(rng, d, d)),
            wk: ps.add(format!("{name}.wk"), init::uniform_fan_in(rng, d, d)),
            wv: ps.add(format!("{name}.wv"), init::uniform_fan_in(rng, d, d)),
            linear_w: ps.add(format!("{name}.linear_w"), init::uniform_fan_in(rng, d, d)),
            linear_b: ps.add(format!("{name}.linear_b"), init::zeros_vec(d)),
            ln_q: (
                ps.add(format!("{name}.ln_q_gamma"), init::ones(d)),
                ps.add(format!("{name}.ln_q_beta"), init::zeros_vec(d)),
            ),
            ln_ctx: (
                ps.add(format!("{name}.ln_ctx_gamma"), init::ones(d)),
                ps.add(format!("{name}.ln_ctx_beta"), init::zeros_vec(d)),
            ),
            width: d,
        }
    }
}

/// D cross-modal blocks for one stream.
#[derive(Debug, Clone)]
pub struct CmStackParams {
    pub blocks: Vec<CmBlockParams>,
}

impl CmStackParams {
    pub fn init<R: Rng>(ps: &mut ParamSet, name: &str, d: usize, depth: usize, rng: &mut R) -> Self {
        let blocks = (0..depth)
            .map(|i| CmBlockParams::init(ps, &format!("{name}.layer{i}"), d, rng))
            .collect();
        CmStackParams { blocks }
    }
}

/// Independent stacks for the four streams, in canonical order:
/// product text, review text, product image, review image.
#[derive(Debug, Clone)]
pub struct InteractionParams {
    pub text_product: CmStackParams,
    pub text_review: CmStackParams,
    pub image_product: CmStackParams,
    pub image_review: CmStackParams,
}

impl InteractionParams {
    pub fn init<R: Rng>(ps: &mut ParamSet, name: &str, d: usize, depth: usize, rng: &mut R) -> Self {
        InteractionParams {
            text_product: CmStackParams::init(ps, &format!("{name}.text_product"), d, depth, rng),
            text_review: CmStackParams::init(ps, &format!("{name}.text_review"), d, depth, rng),
            image_product: CmStackParams::init(ps, &format!("{name}.image_product"), d, depth, rng),
            image_review: CmStackParams::init(ps, &format!("{name}.image_review"), d, depth, rng),
        }
    }
}

/// Post-interaction features for one (product, review) sample:
/// H^p (l_p×d), V^p (m_p×d), H^r (l_r×d), V^r (m_r×d).
#[derive(Debug, Clone, Copy)]
pub struct BundleIds {
    pub h_p: TensorId,
    pub v_p: TensorId,
    pub h_r: TensorId,
    pub v_r: TensorId,
}

/// Parameters of the three fusion paths and the scoring head.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub attn_intra_text: SelfAttnParams,
    pub attn_intra_image: SelfAttnParams,
    pub attn_inter_pt_ri: SelfAttnParams,
    pub attn_inter_pi_rt: SelfAttnParams,
    pub attn_review_product: SelfAttnParams,
    pub attn_review_review: SelfAttnParams,
    conv_kernels: ParamId,
    conv_bias: ParamId,
    final_w: ParamId,
    final_b: ParamId,
    pub width: usize,
}

impl FusionParams {
    pub fn init<R: Rng>(
        ps: &mut ParamSet,
        name: &str,
        d: usize,
        heads: usize,
        conv_width: usize,
        residual_ln: bool,
        rng: &mut R,
    ) -> Self {
        let attn = |ps: &mut ParamSet, suffix: &str, rng: &mut R| {
            SelfAttnParams::init(ps, &format!("{name}.{suffix}"), d, heads, residual_ln, rng)
        };
        FusionParams {
            attn_intra_text: attn(ps, "attn_intra_text", rng),
            attn_intra_image: attn(ps, "attn_intra_image", rng),
            attn_inter_pt_ri: attn(ps, "attn_inter_pt_ri", rng),
            attn_inter_pi_rt: attn(ps, "attn_inter_pi_rt", rng),
            attn_review_product: attn(ps, "attn_review_product", rng),
            attn_review_review: attn(ps, "attn_review_review", rng),
            conv_kernels: ps.add(
                format!("{name}.conv_kernels"),
                init::uniform_fan_in_3d(rng, conv_width, d, d),
            ),
            conv_bias: ps.add(format!("{name}.conv_bias"), init::zeros_vec(d)),
            final_w: ps.add(format!("{name}.final_w"), init::uniform_vec(rng, 5 * d)),
            final_b: ps.add(format!("{name}.final_b"), init::zeros_vec(1)),
            width: d,
        }
    }
}

/// Single cross-attention application: γ queries η.
/// `softmax(Q_γ·K_ηᵀ/√d_k)·V_η`, row count preserved from `x_gamma`.
pub fn cm_attention(
    tape: &mut Tape,
    bind: &ParamBinding,
    block: &CmBlockParams,
    x_gamma: TensorId,
    x_eta: TensorId,
) -> Result<TensorId> {
    let q = tape.matmul(x_gamma, bind.id(block.wq))?;
    let k = tape.matmul(x_eta, bind.id(block.wk))?;
    let v = tape.matmul(x_eta, bind.id(block.wv))?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (block.width as f64).sqrt())?;
    let attn = tape.softmax(scaled, 1)?;
    tape.matmul(attn, v)
}

/// D-layer cross-modal stack. With no layers this is the identity on
/// `x_gamma`.
pub fn cm_stack(
    tape: &mut Tape,
    bind: &ParamBinding,
    stack: &CmStackParams,
    x_gamma: TensorId,
    x_eta: TensorId,
) -> Result<TensorId> {
    let mut q = x_gamma;
    for block in &stack.blocks {
        let q_norm = tape.layer_norm(q, bind.id(block.ln_q.0), bind.id(block.ln_q.1), LN_EPS)?;
        let ctx_norm = tape.layer_norm(
            x_eta,
            bind.id(block.ln_ctx.0),
            bind.id(block.ln_ctx.1),
            LN_EPS,
        )?;
        let t = cm_attention(tape, bind, block, q_norm, ctx_norm)?;
        let u = tape.add(t, q)?;
        let lin = tape.matmul(u, bind.id(block.linear_w))?;
        let lin = tape.add_bias(lin, bind.id(block.linear_b))?;
        q = tape.gelu(lin)?;
    }
    Ok(q)
}

/// Run all four streams. Each stream's context is the row-wise concatenation
/// of the other three inputs, in canonical order (K^p, K^r, A^p, A^r).
pub fn interact_all(
    tape: &mut Tape,
    bind: &ParamBinding,
    params: &InteractionParams,
    k_p: TensorId,
    k_r: TensorId,
    a_p: TensorId,
    a_r: TensorId,
) -> Result<BundleIds> {
    let eta_kp = tape.concat_rows(&[k_r, a_p, a_r])?;
    let eta_kr = tape.concat_rows(&[k_p, a_p, a_r])?;
    let eta_ap = tape.concat_rows(&[k_p, k_r, a_r])?;
    let eta_ar = tape.concat_rows(&[k_p, k_r, a_p])?;
    Ok(BundleIds {
        h_p: cm_stack(tape, bind, &params.text_product, k_p, eta_kp)?,
        h_r: cm_stack(tape, bind, &params.text_review, k_r, eta_kr)?,
        v_p: cm_stack(tape, bind, &params.image_product, a_p, eta_ap)?,
        v_r: cm_stack(tape, bind, &params.image_review, a_r, eta_ar)?,
    })
}

/// Intra-modal path: self-attention over [H^p, H^r] and over [V^p, V^r],
/// a CNN over the concatenated rows, then max-pooling → vector of width d.
pub fn intra_modal_fuse(
    tape: &mut Tape,
    bind: &ParamBinding,
    params: &FusionParams,
    bundle: &BundleIds,
) -> Result<TensorId> {
    let text = tape.concat_rows(&[bundle.h_p, bundle.h_r])?;
    let text = params.attn_intra_text.forward(tape, bind, text)?;
    let image = tape.concat_rows(&[bundle.v_p, bundle.v_r])?;
    let image = params.attn_intra_image.forward(tape, bind, image)?;
    let joined = tape.concat_rows(&[text, image])?;
    let conv = tape.conv1d(joined, bind.id(params.conv_kernels), bind.id(params.conv_bias))?;
    tape.pool(conv, PoolMode::Max, 0)
}

fn attended_mean(
    tape: &mut Tape,
    bind: &ParamBinding,
    attn: &SelfAttnParams,
    first: TensorId,
    second: TensorId,
) -> Result<TensorId> {
    let joined = tape.concat_rows(&[first, second])?;
    let attended = attn.forward(tape, bind, joined)?;
    tape.pool(attended, PoolMode::Mean, 0)
}

/// Inter-modal path: product text against review image and product image
/// against review text, each self-attended and mean-pooled → width 2d.
pub fn inter_modal_fuse(
    tape: &mut Tape,
    bind: &ParamBinding,
    params: &FusionParams,
    bundle: &BundleIds,
) -> Result<TensorId> {
    let pt_ri = attended_mean(tape, bind, &params.attn_inter_pt_ri, bundle.h_p, bundle.v_r)?;
    let pi_rt = attended_mean(tape, bind, &params.attn_inter_pi_rt, bundle.v_p, bundle.h_r)?;
    tape.concat_vec(&[pt_ri, pi_rt])
}

/// Intra-review path: same construction over (product text, product image)
/// and (review text, review image) → width 2d.
pub fn intra_review_fuse(
    tape: &mut Tape,
    bind: &ParamBinding,
    params: &FusionParams,
    bundle: &BundleIds,
) -> Result<TensorId> {
    let product = attended_mean(tape, bind, &params.attn_review_product, bundle.h_p, bundle.v_p)?;
    let review = attended_mean(tape, bind, &params.attn_review_review, bundle.h_r, bundle.v_r)?;
    tape.concat_vec(&[product, review])
}

/// Helpfulness score: the three fusion outputs concatenated (width 5d) and
/// passed through the final linear layer. Unbounded scalar.
pub fn score(
    tape: &mut Tape,
    bind: &ParamBinding,
    params: &FusionParams,
    bundle: &BundleIds,
) -> Result<TensorId> {
    let intra_m = intra_modal_fuse(tape, bind, params, bundle)?;
    let inter_m = inter_modal_fuse(tape, bind, params, bundle)?;
    let intra_r = intra_review_fuse(tape, bind, params, bundle)?;
    let z_final = tape.concat_vec(&[intra_m, inter_m, intra_r])?;
    let weighted = tape.dot(z_final, bind.id(params.final_w))?;
    tape.add(weighted, bind.id(params.final_b))
}

#[cfg(test)]
mod tests;
