//! Independent oracles for the acceptance suite. Nothing here calls the
//! library's kernels, ranking helpers, or metric code: forwards are
//! re-implemented from the model parameters in f64, and metrics are
//! re-derived by brute force, so agreement is evidence rather than tautology.

use xaikit::Model;

/// Independent f64 forward pass: returns the raw logit of `label`.
///
/// Re-implements the desk architecture (same-padded 3x3 conv, ReLU, kxk max
/// pool per block, flatten, dense head) directly from the parameter tensors
/// with plain nested loops and f64 arithmetic throughout.
pub fn forward_logit_f64(model: &Model, image: &[f32], label: usize) -> f64 {
    let (c0, h0, w0) = model.spec.input;
    let mut x: Vec<f64> = image.iter().map(|&v| v as f64).collect();
    let (mut ci, mut h, mut w) = (c0, h0, w0);
    for (b, block) in model.spec.blocks.iter().enumerate() {
        let k = block.kernel;
        let pad = (k - 1) / 2;
        let co = block.channels;
        let wt = model.conv_w[b].data();
        let bias = model.conv_b[b].data();
        // conv, same padding, stride 1
        let mut y = vec![0.0f64; co * h * w];
        for o in 0..co {
            for oy in 0..h {
                for ox in 0..w {
                    let mut acc = bias[o] as f64;
                    for i in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let sy = oy as isize + ky as isize - pad as isize;
                                let sx = ox as isize + kx as isize - pad as isize;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                let xv = x[(i * h + sy as usize) * w + sx as usize];
                                let wv = wt[((o * ci + i) * k + ky) * k + kx] as f64;
                                acc += xv * wv;
                            }
                        }
                    }
                    y[(o * h + oy) * w + ox] = acc.max(0.0); // ReLU fused
                }
            }
        }
        // max pool
        let p = block.pool;
        let (ph, pw) = (h / p, w / p);
        let mut z = vec![0.0f64; co * ph * pw];
        for o in 0..co {
            for oy in 0..ph {
                for ox in 0..pw {
                    let mut best = f64::NEG_INFINITY;
                    for dy in 0..p {
                        for dx in 0..p {
                            let v = y[(o * h + oy * p + dy) * w + ox * p + dx];
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    z[(o * ph + oy) * pw + ox] = best;
                }
            }
        }
        x = z;
        ci = co;
        h = ph;
        w = pw;
    }
    // dense head: logits[k] = sum_f x[f] * W[f, k] + b[k]
    let classes = model.spec.classes;
    let wt = model.fc_w.data();
    let mut acc = model.fc_b.data()[label] as f64;
    for (f, &xv) in x.iter().enumerate() {
        acc += xv * wt[f * classes + label] as f64;
    }
    acc
}

/// Three-point finite-difference probe of the label logit w.r.t. input pixel
/// `i`, using the independent f64 forward. Returns the central-difference
/// slope and the disagreement between the two one-sided slopes.
///
/// The network is piecewise linear in its input, so when the window
/// [x-h, x+h] contains no relu/maxpool kink the one-sided slopes agree to
/// f64 rounding and the central difference is the exact derivative. A large
/// gap means a kink sits inside the window, where a central difference only
/// measures an average slope and is not a derivative estimate at all.
/// `f0` is the unperturbed logit, computed once per image by the caller.
pub fn fd_probe(
    model: &Model,
    image: &[f32],
    label: usize,
    f0: f64,
    i: usize,
    h: f64,
) -> (f64, f64) {
    let mut buf = image.to_vec();
    let x0 = image[i] as f64;
    buf[i] = (x0 + h) as f32;
    let hp = buf[i] as f64 - x0; // actual f32 step, not the nominal h
    let fp = forward_logit_f64(model, &buf, label);
    buf[i] = (x0 - h) as f32;
    let hm = x0 - buf[i] as f64;
    let fm = forward_logit_f64(model, &buf, label);
    let central = (fp - fm) / (hp + hm);
    let gap = ((fp - f0) / hp - (f0 - fm) / hm).abs();
    (central, gap)
}

// ------------------------------------------------------------ metric oracles

/// Argmax by linear scan, strict `>` so ties keep the lowest index.
pub fn pointing_oracle(map: &[f32], mask: &[bool]) -> f64 {
    let mut best = 0;
    for (i, &v) in map.iter().enumerate() {
        if v > map[best] {
            best = i;
        }
    }
    if mask[best] {
        1.0
    } else {
        0.0
    }
}

pub fn attribution_localisation_oracle(map: &[f32], mask: &[bool]) -> f64 {
    let mut inside = 0.0f64;
    let mut total = 0.0f64;
    for (&v, &m) in map.iter().zip(mask) {
        if v > 0.0 {
            total += v as f64;
            if m {
                inside += v as f64;
            }
        }
    }
    inside / total
}

/// Full sort by (value desc, index asc), then count mask hits in the prefix.
pub fn top_k_oracle(map: &[f32], mask: &[bool], k: usize) -> f64 {
    let mut order: Vec<usize> = (0..map.len()).collect();
    order.sort_by(|&a, &b| map[b].partial_cmp(&map[a]).unwrap().then(a.cmp(&b)));
    let hits = order[..k].iter().filter(|&&i| mask[i]).count();
    hits as f64 / k as f64
}

pub fn rra_oracle(map: &[f32], mask: &[bool]) -> f64 {
    let area = mask.iter().filter(|&&b| b).count();
    top_k_oracle(map, mask, area)
}

/// O(pos * neg) pairwise Mann-Whitney: (wins + 0.5 * ties) / (pos * neg).
pub fn auc_oracle(scores: &[f32], labels: &[bool]) -> f64 {
    let mut wins = 0.0f64;
    let mut pairs = 0u64;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs as f64
}
