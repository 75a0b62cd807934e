//! The small multiscale detector: a strided convolutional trunk whose last
//! feature maps match the anchor grids, plus per-level class and offset heads.
//!
//! Forward and backward passes are written out by hand; no autodiff. The
//! backward pass consumes the loss gradients over the prediction field and
//! yields exact parameter gradients.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::conv::{
    conv3x3_backward, conv3x3_forward, out_side, relu_backward_inplace, relu_inplace,
};
use super::tensor::{ParamBlock, ParamSet};
use crate::error::Result;
use crate::geometry::AnchorGridSpec;
use crate::image::ImageTensor;
use crate::invalid_arg;
use crate::loss::PredictionField;

/// Architecture description. The stem halves the input once per entry; each
/// level block halves once more, so level `l` of the anchor grid must have
/// side `input / 2^(stem + 1 + l)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub anchors: AnchorGridSpec,
    pub num_classes: usize,
    pub stem_channels: Vec<usize>,
    pub level_channels: Vec<usize>,
}

impl DetectorSpec {
    /// Desk-scale default: 64x64x3 input, two stem convolutions, three level
    /// blocks at 16/32/64 channels feeding 8x8 / 4x4 / 2x2 heads.
    pub fn toy_default() -> Self {
        DetectorSpec {
            anchors: AnchorGridSpec::toy_default(),
            num_classes: 3,
            stem_channels: vec![8, 16],
            level_channels: vec![16, 32, 64],
        }
    }

    /// Reduced variant for gradient checks: 32x32 input, same layer inventory.
    pub fn tiny(num_classes: usize) -> Self {
        let mut anchors = AnchorGridSpec::toy_default();
        for lvl in &mut anchors.levels {
            lvl.grid /= 2;
        }
        DetectorSpec {
            anchors,
            num_classes,
            stem_channels: vec![4, 6],
            level_channels: vec![8, 12, 16],
        }
    }

    pub fn input_side(&self) -> usize {
        self.anchors.levels[0].grid << (self.stem_channels.len() + 1)
    }

    pub fn num_levels(&self) -> usize {
        self.anchors.levels.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.anchors.validate()?;
        if self.num_classes < 1 {
            return Err(invalid_arg!("need at least one object class"));
        }
        if self.stem_channels.is_empty() || self.stem_channels.iter().any(|c| *c == 0) {
            return Err(invalid_arg!("stem channels must be positive"));
        }
        if self.level_channels.len() != self.num_levels() {
            return Err(invalid_arg!(
                "{} level channel entries for {} anchor levels",
                self.level_channels.len(),
                self.num_levels()
            ));
        }
        if self.level_channels.iter().any(|c| *c == 0) {
            return Err(invalid_arg!("level channels must be positive"));
        }
        for (l, lvl) in self.anchors.levels.iter().enumerate() {
            let expect = self.input_side() >> (self.stem_channels.len() + 1 + l);
            if lvl.grid != expect || expect == 0 {
                return Err(invalid_arg!(
                    "anchor level {l} grid {} does not match feature side {expect}",
                    lvl.grid
                ));
            }
        }
        Ok(())
    }

    /// Digest tying checkpoints to the architecture that produced them.
    pub fn digest(&self) -> [u8; 32] {
        let text = serde_json::to_string(self).expect("spec serializes");
        let mut hasher = Sha256::new();
        hasher.update(text.as_bytes());
        hasher.finalize().into()
    }

    fn conv_plan(&self) -> Vec<(String, usize, usize)> {
        // (name, in_channels, out_channels) in parameter-block order
        let mut plan = Vec::new();
        let mut prev = 3;
        for (i, &c) in self.stem_channels.iter().enumerate() {
            plan.push((format!("stem{i}.weight"), prev, c));
            prev = c;
        }
        for (l, &c) in self.level_channels.iter().enumerate() {
            plan.push((format!("trunk{l}.weight"), prev, c));
            prev = c;
        }
        for (l, lvl) in self.anchors.levels.iter().enumerate() {
            let k = lvl.ratios.len();
            let c = self.level_channels[l];
            plan.push((format!("cls{l}.weight"), c, k * (self.num_classes + 1)));
            plan.push((format!("reg{l}.weight"), c, k * 4));
        }
        plan
    }
}

/// Fan-in scaled random initialization, deterministic per seed.
pub fn init_params(spec: &DetectorSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = crate::rng::stream(seed, "detector-init", &[]);
    let mut blocks = Vec::new();
    for (name, ic, oc) in spec.conv_plan() {
        let fan_in = ic * 9;
        let std = (2.0 / fan_in as f64).sqrt();
        let data: Vec<f64> = (0..oc * ic * 9)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                z * std
            })
            .collect();
        blocks.push(ParamBlock { name: name.clone(), shape: vec![oc, ic, 3, 3], data });
        let bias_name = name.replace(".weight", ".bias");
        blocks.push(ParamBlock::zeros(&bias_name, &[oc]));
    }
    Ok(ParamSet { blocks })
}

/// Zero-valued parameters with the right structure.
pub fn zero_params(spec: &DetectorSpec) -> Result<ParamSet> {
    spec.validate()?;
    let mut blocks = Vec::new();
    for (name, ic, oc) in spec.conv_plan() {
        blocks.push(ParamBlock::zeros(&name, &[oc, ic, 3, 3]));
        blocks.push(ParamBlock::zeros(&name.replace(".weight", ".bias"), &[oc]));
    }
    Ok(ParamSet { blocks })
}

/// Activations recorded during a forward pass, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    input_chw: Vec<f64>,
    /// Post-rectifier stem activations, one per stem convolution.
    stem_acts: Vec<Vec<f64>>,
    /// Post-rectifier level-block activations, one per anchor level.
    trunk_acts: Vec<Vec<f64>>,
}

fn hwc_to_chw(image: &ImageTensor) -> Vec<f64> {
    let (h, w, ch) = (image.height, image.width, image.channels);
    let mut out = vec![0.0; h * w * ch];
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                out[(c * h + y) * w + x] = image.get(y, x, c);
            }
        }
    }
    out
}

fn check_congruence(spec: &DetectorSpec, params: &ParamSet) -> Result<()> {
    let reference = zero_params(spec)?;
    if !params.congruent(&reference) {
        return Err(invalid_arg!("parameter set does not match the detector spec"));
    }
    Ok(())
}

/// Run the detector over one image. Output rows follow the anchor flat order.
pub fn forward(
    spec: &DetectorSpec,
    params: &ParamSet,
    image: &ImageTensor,
) -> Result<(PredictionField, ForwardCache)> {
    spec.validate()?;
    check_congruence(spec, params)?;
    let side = spec.input_side();
    if image.height != side || image.width != side || image.channels != 3 {
        return Err(invalid_arg!(
            "expected a {side}x{side}x3 image, got {}x{}x{}",
            image.height, image.width, image.channels
        ));
    }

    let get = |name: &str| params.block(name).expect("congruence checked");
    let mut cur = hwc_to_chw(image);
    let mut cur_c = 3usize;
    let mut cur_side = side;

    let mut stem_acts = Vec::with_capacity(spec.stem_channels.len());
    for (i, &c) in spec.stem_channels.iter().enumerate() {
        let w = get(&format!("stem{i}.weight"));
        let b = get(&format!("stem{i}.bias"));
        let mut out = conv3x3_forward(&cur, cur_c, cur_side, cur_side, &w.data, &b.data, c, 2);
        relu_inplace(&mut out);
        cur_side = out_side(cur_side, 2);
        cur_c = c;
        stem_acts.push(out.clone());
        cur = out;
    }

    let mut trunk_acts = Vec::with_capacity(spec.num_levels());
    for (l, &c) in spec.level_channels.iter().enumerate() {
        let w = get(&format!("trunk{l}.weight"));
        let b = get(&format!("trunk{l}.bias"));
        let mut out = conv3x3_forward(&cur, cur_c, cur_side, cur_side, &w.data, &b.data, c, 2);
        relu_inplace(&mut out);
        cur_side = out_side(cur_side, 2);
        cur_c = c;
        trunk_acts.push(out.clone());
        cur = out;
    }

    // heads
    let width = spec.num_classes + 1;
    let n_anchors: usize = spec
        .anchors
        .levels
        .iter()
        .map(|l| l.grid * l.grid * l.ratios.len())
        .sum();
    let mut preds = PredictionField::zeros(n_anchors, spec.num_classes);
    let mut anchor_base = 0usize;
    for (l, lvl) in spec.anchors.levels.iter().enumerate() {
        let g = lvl.grid;
        let k_count = lvl.ratios.len();
        let feat_c = spec.level_channels[l];
        let cls_w = get(&format!("cls{l}.weight"));
        let cls_b = get(&format!("cls{l}.bias"));
        let reg_w = get(&format!("reg{l}.weight"));
        let reg_b = get(&format!("reg{l}.bias"));
        let cls_out = conv3x3_forward(
            &trunk_acts[l], feat_c, g, g, &cls_w.data, &cls_b.data, k_count * width, 1,
        );
        let reg_out = conv3x3_forward(
            &trunk_acts[l], feat_c, g, g, &reg_w.data, &reg_b.data, k_count * 4, 1,
        );
        for row in 0..g {
            for col in 0..g {
                for k in 0..k_count {
                    let anchor = anchor_base + (row * g + col) * k_count + k;
                    for c in 0..width {
                        preds.logits[anchor * width + c] =
                            cls_out[((k * width + c) * g + row) * g + col];
                    }
                    for c in 0..4 {
                        preds.offsets[anchor * 4 + c] =
                            reg_out[((k * 4 + c) * g + row) * g + col];
                    }
                }
            }
        }
        anchor_base += g * g * k_count;
    }

    Ok((preds, ForwardCache { input_chw: hwc_to_chw(image), stem_acts, trunk_acts }))
}

/// Exact parameter gradients for the loss whose prediction-field gradients are
/// given. `cache` must come from the matching [`forward`] call.
pub fn backward(
    spec: &DetectorSpec,
    params: &ParamSet,
    cache: &ForwardCache,
    dlogits: &[f64],
    doffsets: &[f64],
) -> Result<ParamSet> {
    spec.validate()?;
    check_congruence(spec, params)?;
    let width = spec.num_classes + 1;
    let n_anchors: usize = spec
        .anchors
        .levels
        .iter()
        .map(|l| l.grid * l.grid * l.ratios.len())
        .sum();
    if dlogits.len() != n_anchors * width || doffsets.len() != n_anchors * 4 {
        return Err(invalid_arg!("output gradients do not match the anchor layout"));
    }
    if cache.trunk_acts.len() != spec.num_levels()
        || cache.stem_acts.len() != spec.stem_channels.len()
    {
        return Err(invalid_arg!("forward cache does not match the detector spec"));
    }

    let get = |name: &str| params.block(name).expect("congruence checked");
    let mut grads = ParamSet::zeros_like(params);
    let set_grad = |grads: &mut ParamSet, name: &str, data: Vec<f64>| {
        let b = grads
            .blocks
            .iter_mut()
            .find(|b| b.name == name)
            .expect("congruence checked");
        debug_assert_eq!(b.data.len(), data.len());
        b.data = data;
    };

    // head backward; gradient into each level's trunk activation
    let mut trunk_grads: Vec<Vec<f64>> = cache
        .trunk_acts
        .iter()
        .map(|a| vec![0.0; a.len()])
        .collect();
    let mut anchor_base = 0usize;
    for (l, lvl) in spec.anchors.levels.iter().enumerate() {
        let g = lvl.grid;
        let k_count = lvl.ratios.len();
        let feat_c = spec.level_channels[l];

        let mut cls_go = vec![0.0; k_count * width * g * g];
        let mut reg_go = vec![0.0; k_count * 4 * g * g];
        for row in 0..g {
            for col in 0..g {
                for k in 0..k_count {
                    let anchor = anchor_base + (row * g + col) * k_count + k;
                    for c in 0..width {
                        cls_go[((k * width + c) * g + row) * g + col] =
                            dlogits[anchor * width + c];
                    }
                    for c in 0..4 {
                        reg_go[((k * 4 + c) * g + row) * g + col] = doffsets[anchor * 4 + c];
                    }
                }
            }
        }
        let cls_w = get(&format!("cls{l}.weight"));
        let (gi_cls, gk_cls, gb_cls) = conv3x3_backward(
            &cache.trunk_acts[l], feat_c, g, g, &cls_w.data, k_count * width, 1, &cls_go,
        );
        let reg_w = get(&format!("reg{l}.weight"));
        let (gi_reg, gk_reg, gb_reg) = conv3x3_backward(
            &cache.trunk_acts[l], feat_c, g, g, &reg_w.data, k_count * 4, 1, &reg_go,
        );
        set_grad(&mut grads, &format!("cls{l}.weight"), gk_cls);
        set_grad(&mut grads, &format!("cls{l}.bias"), gb_cls);
        set_grad(&mut grads, &format!("reg{l}.weight"), gk_reg);
        set_grad(&mut grads, &format!("reg{l}.bias"), gb_reg);
        for (dst, (a, b)) in trunk_grads[l].iter_mut().zip(gi_cls.iter().zip(&gi_reg)) {
            *dst += a + b;
        }
        anchor_base += g * g * k_count;
    }

    // trunk backward, deepest level first; each block's input gradient joins
    // the head gradient already accumulated at the previous level
    let stem_n = spec.stem_channels.len();
    let side_of = |depth: usize| spec.input_side() >> depth; // depth in conv count
    for l in (0..spec.num_levels()).rev() {
        let mut go = std::mem::take(&mut trunk_grads[l]);
        relu_backward_inplace(&mut go, &cache.trunk_acts[l]);
        let (input, ic, ih): (&[f64], usize, usize) = if l == 0 {
            (
                &cache.stem_acts[stem_n - 1],
                spec.stem_channels[stem_n - 1],
                side_of(stem_n),
            )
        } else {
            (
                &cache.trunk_acts[l - 1],
                spec.level_channels[l - 1],
                side_of(stem_n + l),
            )
        };
        let w = get(&format!("trunk{l}.weight"));
        let oc = spec.level_channels[l];
        let (gi, gk, gb) = conv3x3_backward(input, ic, ih, ih, &w.data, oc, 2, &go);
        set_grad(&mut grads, &format!("trunk{l}.weight"), gk);
        set_grad(&mut grads, &format!("trunk{l}.bias"), gb);
        if l == 0 {
            trunk_grads[0] = gi; // repurposed: gradient into the last stem activation
        } else {
            for (dst, src) in trunk_grads[l - 1].iter_mut().zip(&gi) {
                *dst += src;
            }
        }
    }

    // stem backward
    let mut grad_act = std::mem::take(&mut trunk_grads[0]);
    for i in (0..stem_n).rev() {
        relu_backward_inplace(&mut grad_act, &cache.stem_acts[i]);
        let (input, ic, ih): (&[f64], usize, usize) = if i == 0 {
            (&cache.input_chw, 3, side_of(0))
        } else {
            (&cache.stem_acts[i - 1], spec.stem_channels[i - 1], side_of(i))
        };
        let w = get(&format!("stem{i}.weight"));
        let oc = spec.stem_channels[i];
        let (gi, gk, gb) = conv3x3_backward(input, ic, ih, ih, &w.data, oc, 2, &grad_act);
        set_grad(&mut grads, &format!("stem{i}.weight"), gk);
        set_grad(&mut grads, &format!("stem{i}.bias"), gb);
        grad_act = gi;
    }

    Ok(grads)
}
