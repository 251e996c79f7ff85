//! Adam optimizer over flat parameter slices.

/// Hyperparameters; defaults are the conventional ones.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment estimates for one flat parameter block.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step_count: 0,
        }
    }

    /// One bias-corrected Adam step. Call `advance` once per batch before
    /// stepping each parameter block that shares this state's clock.
    pub fn step(&mut self, hyper: &AdamHyper, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), grads.len());
        debug_assert_eq!(params.len(), self.first_moment.len());
        let t = self.step_count as i32;
        debug_assert!(t >= 1, "advance() must be called before step()");
        let correct1 = 1.0 - hyper.beta1.powi(t);
        let correct2 = 1.0 - hyper.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            let m = &mut self.first_moment[i];
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            let v = &mut self.second_moment[i];
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            params[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }

    pub fn advance(&mut self) {
        self.step_count += 1;
    }
}

/// Round each value to the nearest f32. Parameters are kept on the f32
/// grid so model files (which store f32) round-trip bitwise, while all
/// arithmetic stays in f64.
pub fn snap_to_f32(values: &mut [f64]) {
    for v in values.iter_mut() {
        *v = *v as f32 as f64;
    }
}
