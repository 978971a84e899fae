//! Symmetric rank-1 extraction by fitting `λ v^{⊗k}` with Adam, deflation
//! ratios, and a grid-search spectral norm for small tensors.

use crate::error::{Error, Result};
use crate::rng::{self, Tag};
use crate::tensor::{asymmetry, DenseTensor, Rank1Certificate};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub gradnorm_epsilon: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Fixed-point refinement iterations applied after the Adam phase.
    pub polish_iters: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 2000, gradnorm_epsilon: 1e-8, restarts: 5, seed: 0, polish_iters: 500 }
    }
}

impl PcaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.gradnorm_epsilon > 0.0) || self.restarts == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(format!("invalid PCA configuration {self:?}")));
        }
        Ok(())
    }
}

/// Contract one mode of a tensor laid out as `(outer, d, inner)` against `v`.
fn contract_mode(data: &[f64], outer: usize, d: usize, inner: usize, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; outer * inner];
    for o in 0..outer {
        let dst = &mut out[o * inner..(o + 1) * inner];
        for (j, &c) in v.iter().enumerate() {
            let src = &data[(o * d + j) * inner..(o * d + j + 1) * inner];
            for (a, b) in dst.iter_mut().zip(src) {
                *a += c * b;
            }
        }
    }
    out
}

/// Contract every mode except `keep` against `v`; with `keep = None` the
/// result is the scalar `⟨t, v^{⊗k}⟩`.
fn contract_except(t: &[f64], order: usize, d: usize, v: &[f64], keep: Option<usize>) -> Vec<f64> {
    let mut data = t.to_vec();
    let mut modes: Vec<usize> = (0..order).collect();
    while modes.len() > usize::from(keep.is_some()) {
        let pos = modes.iter().rposition(|&m| Some(m) != keep).expect("a mode remains to contract");
        let outer = d.pow(pos as u32);
        let inner = d.pow((modes.len() - pos - 1) as u32);
        data = contract_mode(&data, outer, d, inner, v);
        modes.remove(pos);
    }
    data
}

/// Value and gradient of `f(v) = ⟨t, v^{⊗k}⟩`.
fn multilinear(t: &[f64], order: usize, d: usize, v: &[f64]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; d];
    for m in 0..order {
        for (g, c) in grad.iter_mut().zip(contract_except(t, order, d, v, Some(m))) {
            *g += c;
        }
    }
    let value = grad.iter().zip(v).map(|(g, x)| g * x).sum::<f64>() / order as f64;
    (value, grad)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

struct Fit {
    loss: f64,
    scale: f64,
    direction: Vec<f64>,
}

/// Loss and gradient of `λ²‖v‖^{2k} − 2λ f(v)` in the packed layout `[λ, v]`.
fn pca_loss_grad(t: &[f64], order: usize, d: usize, p: &[f64]) -> (f64, Vec<f64>) {
    let lam = p[0];
    let v = &p[1..];
    let k = order as i32;
    let nv2 = v.iter().map(|a| a * a).sum::<f64>();
    let (f, gf) = multilinear(t, order, d, v);
    let loss = lam * lam * nv2.powi(k) - 2.0 * lam * f;
    let mut g = Vec::with_capacity(d + 1);
    g.push(2.0 * lam * nv2.powi(k) - 2.0 * f);
    let coef = 2.0 * k as f64 * lam * lam * nv2.powi(k - 1);
    g.extend(v.iter().zip(&gf).map(|(x, gfi)| coef * x - 2.0 * lam * gfi));
    (loss, g)
}

/// Shifted symmetric power iteration maximizing `|f(u)|` on the unit sphere.
fn polish(t: &[f64], order: usize, d: usize, u: &mut Vec<f64>, iters: usize, t_norm: f64) {
    let shift = (order * order.saturating_sub(1)) as f64 * t_norm;
    let (mut value, _) = multilinear(t, order, d, u);
    for _ in 0..iters {
        let (_, g) = multilinear(t, order, d, u);
        let s = if value >= 0.0 { 1.0 } else { -1.0 };
        let mut accepted = None;
        for alpha in [0.0, shift] {
            let mut cand: Vec<f64> = g.iter().zip(u.iter()).map(|(gi, ui)| s * gi + alpha * ui).collect();
            let n = norm(&cand);
            if n == 0.0 {
                continue;
            }
            cand.iter_mut().for_each(|c| *c /= n);
            let (cv, _) = multilinear(t, order, d, &cand);
            if cv.abs() >= value.abs() {
                accepted = Some((cand, cv));
                break;
            }
        }
        let Some((cand, cv)) = accepted else { break };
        let step = cand.iter().zip(u.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        *u = cand;
        value = cv;
        if step < 1e-15 {
            break;
        }
    }
}

fn fit_once(t: &[f64], order: usize, d: usize, cfg: &PcaConfig, restart: usize) -> Fit {
    let mut rng = rng::stream(cfg.seed, restart as u64, Tag::Pca);
    let mut p = Vec::with_capacity(d + 1);
    p.push(0.001 * rng::normal(&mut rng));
    let sd = (d as f64).sqrt();
    p.extend(rng::normal_vec(&mut rng, d).into_iter().map(|a| a / sd));

    let (b1, b2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m = vec![0.0; d + 1];
    let mut s = vec![0.0; d + 1];
    for epoch in 1..=cfg.epochs {
        let (_, g) = pca_loss_grad(t, order, d, &p);
        if norm(&g) < cfg.gradnorm_epsilon {
            break;
        }
        let c1 = 1.0 - b1.powi(epoch as i32);
        let c2 = 1.0 - b2.powi(epoch as i32);
        for i in 0..=d {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            s[i] = b2 * s[i] + (1.0 - b2) * g[i] * g[i];
            p[i] -= cfg.learning_rate * (m[i] / c1) / ((s[i] / c2).sqrt() + eps);
        }
    }

    let nv = norm(&p[1..]);
    let mut u: Vec<f64> = if nv > 0.0 { p[1..].iter().map(|a| a / nv).collect() } else { unit(d, 0) };
    polish(t, order, d, &mut u, cfg.polish_iters, norm(t));
    let (f, _) = multilinear(t, order, d, &u);
    Fit { loss: -f * f, scale: f, direction: u }
}

fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

/// Dominant symmetric rank-1 component of a cubic tensor.
///
/// The tensor is normalized before fitting so the result is invariant to
/// its overall scale. For odd order the sign is folded into the direction
/// so that `scale ≥ 0`.
pub fn dominant_component(t: &DenseTensor, cfg: &PcaConfig) -> Result<Rank1Certificate> {
    t.require_cubic()?;
    cfg.validate()?;
    let order = t.order();
    let d = t.dim();
    let t_norm = t.norm();
    if t_norm == 0.0 {
        return Ok(Rank1Certificate { scale: 0.0, direction: unit(d, 0), residual_fro: 0.0, grad_norm: 0.0, converged: true });
    }
    let tn: Vec<f64> = t.data().iter().map(|v| v / t_norm).collect();

    let mut best: Option<Fit> = None;
    for restart in 0..cfg.restarts {
        let fit = fit_once(&tn, order, d, cfg, restart);
        if best.as_ref().map_or(true, |b| fit.loss < b.loss) {
            best = Some(fit);
        }
    }
    let Fit { mut scale, mut direction, .. } = best.expect("at least one restart");
    if order % 2 == 1 && scale < 0.0 {
        scale = -scale;
        direction.iter_mut().for_each(|v| *v = -*v);
    } else if order % 2 == 0 {
        let mut dv = nalgebra::DVector::from_vec(direction);
        crate::linalg::fix_sign(&mut dv);
        direction = dv.as_slice().to_vec();
    }

    let mut packed = vec![scale];
    packed.extend_from_slice(&direction);
    let (_, g) = pca_loss_grad(&tn, order, d, &packed);
    let grad_norm = norm(&g);

    let scale = scale * t_norm;
    let fitted = DenseTensor::outer_power(&direction, order, scale)?;
    let residual_fro = t.sub(&fitted)?.norm();
    Ok(Rank1Certificate { scale, direction, residual_fro, grad_norm, converged: grad_norm <= cfg.gradnorm_epsilon })
}

/// Result of two rounds of rank-1 deflation.
#[derive(Clone, Debug)]
pub struct Deflation {
    /// `‖w2‖_F / ‖w1‖_F`.
    pub ratio: f64,
    pub first: Rank1Certificate,
    pub second: Rank1Certificate,
}

pub fn deflation_ratio(t: &DenseTensor, cfg: &PcaConfig) -> Result<Deflation> {
    let asym = asymmetry(t)?;
    if asym > 1e-6 {
        return Err(Error::Precondition(format!("deflation requires a symmetric tensor (asymmetry {asym:e})")));
    }
    let first = dominant_component(t, cfg)?;
    let rest = t.sub(&first.order_tensor(t.order())?)?;
    let second = dominant_component(&rest, cfg)?;
    let ratio = if first.scale == 0.0 { 1.0 } else { second.scale.abs() / first.scale.abs() };
    Ok(Deflation { ratio, first, second })
}

fn sphere_grid(d: usize, points: usize) -> Vec<Vec<f64>> {
    let points = points.max(1);
    match d {
        1 => vec![vec![1.0]],
        2 => (0..points)
            .map(|i| {
                let th = 2.0 * std::f64::consts::PI * i as f64 / points as f64;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..points)
                .map(|i| {
                    let z = 1.0 - (2 * i + 1) as f64 / points as f64;
                    let r = (1.0 - z * z).max(0.0).sqrt();
                    let phi = golden * i as f64;
                    vec![r * phi.cos(), r * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            let g = (points as f64).cbrt().ceil() as usize;
            let pi = std::f64::consts::PI;
            let mut out = Vec::with_capacity(g * g * g);
            for a in 0..g {
                let psi = pi * (a as f64 + 0.5) / g as f64;
                for b in 0..g {
                    let th = pi * (b as f64 + 0.5) / g as f64;
                    for c in 0..g {
                        let phi = 2.0 * pi * c as f64 / g as f64;
                        out.push(vec![
                            psi.cos(),
                            psi.sin() * th.cos(),
                            psi.sin() * th.sin() * phi.cos(),
                            psi.sin() * th.sin() * phi.sin(),
                        ]);
                    }
                }
            }
            out
        }
    }
}

/// `max_{‖u‖=1} |⟨t, u^{⊗k}⟩|` by grid search plus projected gradient ascent.
/// Intended for verification on tensors of dimension at most 4.
pub fn spectral_norm_oracle(t: &DenseTensor, grid_points: usize) -> Result<f64> {
    t.require_cubic()?;
    let d = t.dim();
    if d > 4 {
        return Err(Error::InvalidArgument(format!("spectral norm oracle supports dim <= 4, got {d}")));
    }
    let order = t.order();
    let eval = |u: &[f64]| -> f64 {
        let mut acc = 0.0;
        let mut digits = vec![0usize; order];
        for &v in t.data() {
            acc += v * digits.iter().map(|&i| u[i]).product::<f64>();
            for a in (0..order).rev() {
                digits[a] += 1;
                if digits[a] < d {
                    break;
                }
                digits[a] = 0;
            }
        }
        acc
    };
    let mut best = sphere_grid(d, grid_points)
        .into_iter()
        .map(|u| (eval(&u).abs(), u))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("non-empty grid");
    let h = 1e-7;
    let mut step = 0.1;
    for _ in 0..2000 {
        if step < 1e-14 {
            break;
        }
        let u = &best.1;
        let grad: Vec<f64> = (0..d)
            .map(|i| {
                let mut p = u.clone();
                let mut m = u.clone();
                p[i] += h;
                m[i] -= h;
                (eval(&p).abs() - eval(&m).abs()) / (2.0 * h)
            })
            .collect();
        let radial: f64 = grad.iter().zip(u).map(|(g, x)| g * x).sum();
        let mut cand: Vec<f64> = u.iter().zip(&grad).map(|(x, g)| x + step * (g - radial * x)).collect();
        let n = norm(&cand);
        cand.iter_mut().for_each(|c| *c /= n);
        let val = eval(&cand).abs();
        if val > best.0 {
            best = (val, cand);
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    Ok(best.0)
}
