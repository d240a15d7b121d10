//! Thin real-data wrapper around complex FFT plans.
//!
//! Coefficients are stored as the half spectrum `k = 0..=n/2`, normalized so
//! that `u(x_j) = sum_k c_k exp(i k x_j)`. Plans are cached per size because
//! sweeps build many short-lived transforms.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

type PlanCache = Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>;

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<PlanCache> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut cache = cache.lock().unwrap_or_else(|e| e.into_inner());
    cache
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

pub(crate) struct RealTransform {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl RealTransform {
    pub fn new(n: usize) -> Self {
        let forward = plan(n, false);
        let inverse = plan(n, true);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Self {
            n,
            forward,
            inverse,
            buf: vec![Complex64::default(); n],
            scratch: vec![Complex64::default(); scratch_len],
        }
    }

    /// Samples on `n` points to normalized coefficients. `out` may be shorter
    /// than `n/2 + 1`, in which case the spectrum is truncated.
    pub fn analyze(&mut self, samples: &[f64], out: &mut [Complex64]) {
        debug_assert_eq!(samples.len(), self.n);
        for (b, &s) in self.buf.iter_mut().zip(samples) {
            *b = Complex64::new(s, 0.0);
        }
        self.forward
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        let scale = 1.0 / self.n as f64;
        let keep = out.len().min(self.n / 2 + 1);
        for (o, b) in out.iter_mut().zip(&self.buf[..keep]) {
            *o = b * scale;
        }
        for o in out.iter_mut().skip(keep) {
            *o = Complex64::default();
        }
    }

    /// Evaluates the half spectrum of a `src_points` grid on `n >= src_points`
    /// points. The source Nyquist coefficient is split evenly between `±k`
    /// when oversampling, which is the real cosine interpretation.
    pub fn synthesize(&mut self, coeffs: &[Complex64], src_points: usize, out: &mut [f64]) {
        debug_assert!(src_points <= self.n);
        debug_assert_eq!(coeffs.len(), src_points / 2 + 1);
        debug_assert_eq!(out.len(), self.n);
        let n = self.n;
        let nyq = src_points / 2;
        self.buf.fill(Complex64::default());
        self.buf[0] = Complex64::new(coeffs[0].re, 0.0);
        for k in 1..nyq {
            self.buf[k] = coeffs[k];
            self.buf[n - k] = coeffs[k].conj();
        }
        if n == src_points {
            self.buf[nyq] = Complex64::new(coeffs[nyq].re, 0.0);
        } else {
            let half = Complex64::new(coeffs[nyq].re * 0.5, 0.0);
            self.buf[nyq] += half;
            self.buf[n - nyq] += half;
        }
        self.inverse
            .process_with_scratch(&mut self.buf, &mut self.scratch);
        for (o, b) in out.iter_mut().zip(&self.buf) {
            *o = b.re;
        }
    }
}
