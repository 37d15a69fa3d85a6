use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TwinError;
use crate::bus::SimRng;

/// Weights of one gated recurrent unit. Matrices are row-major,
/// `hidden × input` for the `w_*` and `hidden × hidden` for the `u_*`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruCellParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_z: Vec<f64>,
    pub w_r: Vec<f64>,
    pub w_h: Vec<f64>,
    pub u_z: Vec<f64>,
    pub u_r: Vec<f64>,
    pub u_h: Vec<f64>,
    pub b_z: Vec<f64>,
    pub b_r: Vec<f64>,
    pub b_h: Vec<f64>,
}

/// Activations kept from a forward step for backpropagation.
#[derive(Debug, Clone, Default)]
pub(crate) struct StepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub cand: Vec<f64>,
    pub rh: Vec<f64>,
}

impl GruCellParams {
    pub fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let wi = vec![0.0; hidden_size * input_size];
        let wh = vec![0.0; hidden_size * hidden_size];
        let b = vec![0.0; hidden_size];
        Self {
            input_size,
            hidden_size,
            w_z: wi.clone(),
            w_r: wi.clone(),
            w_h: wi,
            u_z: wh.clone(),
            u_r: wh.clone(),
            u_h: wh,
            b_z: b.clone(),
            b_r: b.clone(),
            b_h: b,
        }
    }

    /// Uniform in ±√(1/fan_in) per matrix; biases use the gate's total fan-in.
    pub fn init_uniform(input_size: usize, hidden_size: usize, rng: &mut SimRng) -> Self {
        let mut p = Self::zeros(input_size, hidden_size);
        let wi = (1.0 / input_size as f64).sqrt();
        let wh = (1.0 / hidden_size as f64).sqrt();
        let wb = (1.0 / (input_size + hidden_size) as f64).sqrt();
        for m in [&mut p.w_z, &mut p.w_r, &mut p.w_h] {
            m.iter_mut().for_each(|w| *w = rng.gen_range(-wi..wi));
        }
        for m in [&mut p.u_z, &mut p.u_r, &mut p.u_h] {
            m.iter_mut().for_each(|w| *w = rng.gen_range(-wh..wh));
        }
        for m in [&mut p.b_z, &mut p.b_r, &mut p.b_h] {
            m.iter_mut().for_each(|w| *w = rng.gen_range(-wb..wb));
        }
        p
    }

    pub fn slices(&self) -> [&[f64]; 9] {
        [&self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z, &self.b_r, &self.b_h]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_h,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_h,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_h,
        ]
    }

    pub fn validate(&self) -> Result<(), TwinError> {
        let (i, h) = (self.input_size, self.hidden_size);
        let shapes_ok = [&self.w_z, &self.w_r, &self.w_h].iter().all(|m| m.len() == h * i)
            && [&self.u_z, &self.u_r, &self.u_h].iter().all(|m| m.len() == h * h)
            && [&self.b_z, &self.b_r, &self.b_h].iter().all(|m| m.len() == h);
        if !shapes_ok {
            return Err(TwinError::Shape(format!("GRU cell {i}→{h} has inconsistent weight sizes")));
        }
        if self.slices().iter().any(|s| s.iter().any(|w| !w.is_finite())) {
            return Err(TwinError::Shape("non-finite GRU weight".into()));
        }
        Ok(())
    }

    /// One cell update `h′ = (1−z)⊙h + z⊙h̃`.
    pub fn step(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>, TwinError> {
        if x.len() != self.input_size || h.len() != self.hidden_size {
            return Err(TwinError::Shape(format!(
                "GRU expects input {} / hidden {}, got {} / {}",
                self.input_size,
                self.hidden_size,
                x.len(),
                h.len()
            )));
        }
        let mut cache = StepCache::default();
        let mut out = vec![0.0; self.hidden_size];
        self.forward_cached(x, h, &mut cache, &mut out);
        Ok(out)
    }

    pub(crate) fn forward_cached(&self, x: &[f64], h: &[f64], cache: &mut StepCache, out: &mut [f64]) {
        let n = self.hidden_size;
        let ni = self.input_size;
        let mut z = self.b_z.clone();
        let mut r = self.b_r.clone();
        let mut cand = self.b_h.clone();
        matvec_add(&mut z, &self.w_z, x, ni);
        matvec_add(&mut z, &self.u_z, h, n);
        matvec_add(&mut r, &self.w_r, x, ni);
        matvec_add(&mut r, &self.u_r, h, n);
        z.iter_mut().for_each(|a| *a = sigmoid(*a));
        r.iter_mut().for_each(|a| *a = sigmoid(*a));
        let rh: Vec<f64> = r.iter().zip(h).map(|(r, h)| r * h).collect();
        matvec_add(&mut cand, &self.w_h, x, ni);
        matvec_add(&mut cand, &self.u_h, &rh, n);
        cand.iter_mut().for_each(|a| *a = tanh(*a));
        for k in 0..n {
            out[k] = (1.0 - z[k]) * h[k] + z[k] * cand[k];
        }
        cache.x.clear();
        cache.x.extend_from_slice(x);
        cache.h_prev.clear();
        cache.h_prev.extend_from_slice(h);
        cache.z = z;
        cache.r = r;
        cache.cand = cand;
        cache.rh = rh;
    }

    /// Accumulates parameter gradients into `grad` and writes the gradients
    /// w.r.t. the previous hidden state and (optionally) the input.
    pub(crate) fn backward(
        &self,
        cache: &StepCache,
        dh_out: &[f64],
        grad: &mut GruCellParams,
        dh_prev: &mut [f64],
        dx: Option<&mut [f64]>,
    ) {
        let n = self.hidden_size;
        let ni = self.input_size;
        let mut da_z = vec![0.0; n];
        let mut da_h = vec![0.0; n];
        for k in 0..n {
            let z = cache.z[k];
            let c = cache.cand[k];
            let g = dh_out[k];
            dh_prev[k] = g * (1.0 - z);
            da_z[k] = g * (c - cache.h_prev[k]) * z * (1.0 - z);
            da_h[k] = g * z * (1.0 - c * c);
        }
        // candidate path
        outer_add(&mut grad.w_h, &da_h, &cache.x);
        outer_add(&mut grad.u_h, &da_h, &cache.rh);
        add_assign(&mut grad.b_h, &da_h);
        let mut d_rh = vec![0.0; n];
        matvec_t_add(&mut d_rh, &self.u_h, &da_h, n);
        let mut da_r = vec![0.0; n];
        for k in 0..n {
            let r = cache.r[k];
            dh_prev[k] += d_rh[k] * r;
            da_r[k] = d_rh[k] * cache.h_prev[k] * r * (1.0 - r);
        }
        // gates
        outer_add(&mut grad.w_z, &da_z, &cache.x);
        outer_add(&mut grad.u_z, &da_z, &cache.h_prev);
        add_assign(&mut grad.b_z, &da_z);
        outer_add(&mut grad.w_r, &da_r, &cache.x);
        outer_add(&mut grad.u_r, &da_r, &cache.h_prev);
        add_assign(&mut grad.b_r, &da_r);
        matvec_t_add(dh_prev, &self.u_z, &da_z, n);
        matvec_t_add(dh_prev, &self.u_r, &da_r, n);
        if let Some(dx) = dx {
            matvec_t_add(dx, &self.w_z, &da_z, ni);
            matvec_t_add(dx, &self.w_r, &da_r, ni);
            matvec_t_add(dx, &self.w_h, &da_h, ni);
        }
    }
}

#[inline]
pub(crate) fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// `tanh` through a single `exp`; noticeably cheaper than the libm routine
/// and accurate to a few ulp.
#[inline]
pub(crate) fn tanh(a: f64) -> f64 {
    if a.abs() > 20.0 {
        return a.signum();
    }
    let e = (2.0 * a).exp();
    (e - 1.0) / (e + 1.0)
}

/// Dot product with four interleaved accumulators (fixed order, so results
/// are reproducible while still vectorizing).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += M·x` for row-major `M` with `cols` columns.
#[inline]
pub(crate) fn matvec_add(out: &mut [f64], m: &[f64], x: &[f64], cols: usize) {
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Mᵀ·g` for row-major `M` with `cols` columns.
#[inline]
pub(crate) fn matvec_t_add(out: &mut [f64], m: &[f64], g: &[f64], cols: usize) {
    for (gi, row) in g.iter().zip(m.chunks_exact(cols)) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += gi * w;
        }
    }
}

/// `M += a·bᵀ`.
#[inline]
pub(crate) fn outer_add(m: &mut [f64], a: &[f64], b: &[f64]) {
    for (ai, row) in a.iter().zip(m.chunks_exact_mut(b.len())) {
        for (w, bj) in row.iter_mut().zip(b) {
            *w += ai * bj;
        }
    }
}

#[inline]
pub(crate) fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_cell_fixed_point() {
        let p = GruCellParams::zeros(3, 4);
        assert_eq!(p.step(&[0.0; 3], &[0.0; 4]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn scalar_hand_value() {
        let mut p = GruCellParams::zeros(1, 1);
        p.w_h[0] = 1.0;
        let h = p.step(&[1.0], &[0.0]).unwrap();
        // z = σ(0) = 0.5, h̃ = tanh(1), h′ = 0.5·tanh(1)
        assert!((h[0] - 0.5 * 1.0f64.tanh()).abs() < 1e-15);
        assert!((h[0] - 0.38080).abs() < 5e-6);
    }

    #[test]
    fn closed_update_gate_keeps_state() {
        let mut rng = crate::bus::sim_rng(3);
        let mut p = GruCellParams::init_uniform(2, 3, &mut rng);
        p.b_z.iter_mut().for_each(|b| *b = -50.0);
        let h = [0.3, -0.2, 0.9];
        let out = p.step(&[1.0, -1.0], &h).unwrap();
        for (a, b) in out.iter().zip(h) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_mismatch() {
        let p = GruCellParams::zeros(2, 3);
        assert!(matches!(p.step(&[0.0], &[0.0; 3]), Err(TwinError::Shape(_))));
        assert!(matches!(p.step(&[0.0; 2], &[0.0; 2]), Err(TwinError::Shape(_))));
    }

    #[test]
    fn validate_catches_bad_shapes() {
        let mut p = GruCellParams::zeros(2, 3);
        assert!(p.validate().is_ok());
        p.u_r.pop();
        assert!(p.validate().is_err());
    }

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..11).map(|i| 1.0 - i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }
}
