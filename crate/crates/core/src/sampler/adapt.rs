//! Warmup adaptation: dual averaging of the step size and windowed
//! estimation of a diagonal inverse metric.

/// Nesterov dual averaging on log ε.
#[derive(Debug, Clone)]
pub(crate) struct StepSizeAdapter {
    target: f64,
    mu: f64,
    counter: f64,
    s_bar: f64,
    x_bar: f64,
}

const GAMMA: f64 = 0.05;
const T0: f64 = 10.0;
const KAPPA: f64 = 0.75;

impl StepSizeAdapter {
    pub(crate) fn new(target: f64, step_size: f64) -> Self {
        let mut adapter = Self {
            target,
            mu: 0.0,
            counter: 0.0,
            s_bar: 0.0,
            x_bar: 0.0,
        };
        adapter.restart(step_size);
        adapter
    }

    /// Resets the averages and centres the shrinkage on ln(10ε).
    pub(crate) fn restart(&mut self, step_size: f64) {
        self.mu = (10.0 * step_size).ln();
        self.counter = 0.0;
        self.s_bar = 0.0;
        self.x_bar = 0.0;
    }

    /// Returns the next step size given the latest mean acceptance statistic.
    pub(crate) fn learn(&mut self, accept_stat: f64) -> f64 {
        self.counter += 1.0;
        let accept_stat = accept_stat.min(1.0);
        let eta = 1.0 / (self.counter + T0);
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat);
        let x = self.mu - self.s_bar * self.counter.sqrt() / GAMMA;
        let x_eta = self.counter.powf(-KAPPA);
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x;
        x.exp()
    }

    /// The averaged step size used after warmup.
    pub(crate) fn final_step_size(&self) -> f64 {
        self.x_bar.exp()
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone)]
struct Welford {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    fn restart(&mut self) {
        self.n = 0;
        self.mean.fill(0.0);
        self.m2.fill(0.0);
    }
}

/// Warmup schedule with an initial fast buffer, doubling slow windows and a
/// terminal fast buffer.
#[derive(Debug, Clone)]
pub(crate) struct MetricAdapter {
    warmup: usize,
    init_buffer: usize,
    term_buffer: usize,
    window_size: usize,
    next_window: usize,
    counter: usize,
    estimator: Welford,
}

pub(crate) const INIT_BUFFER: usize = 75;
pub(crate) const TERM_BUFFER: usize = 50;
pub(crate) const BASE_WINDOW: usize = 25;

impl MetricAdapter {
    pub(crate) fn new(dim: usize, warmup: usize) -> Self {
        let (mut init_buffer, mut term_buffer, mut base_window) = (INIT_BUFFER, TERM_BUFFER, BASE_WINDOW);
        if init_buffer + base_window + term_buffer > warmup {
            init_buffer = (0.15 * warmup as f64) as usize;
            term_buffer = (0.1 * warmup as f64) as usize;
            base_window = warmup - (init_buffer + term_buffer);
        }
        Self {
            warmup,
            init_buffer,
            term_buffer,
            window_size: base_window,
            next_window: init_buffer + base_window - 1,
            counter: 0,
            estimator: Welford::new(dim),
        }
    }

    fn in_window(&self) -> bool {
        self.counter >= self.init_buffer && self.counter < self.warmup - self.term_buffer && self.counter != self.warmup
    }

    fn window_ends(&self) -> bool {
        self.counter == self.next_window && self.counter != self.warmup
    }

    fn compute_next_window(&mut self) {
        let last = self.warmup - self.term_buffer - 1;
        if self.next_window == last {
            return;
        }
        self.window_size *= 2;
        self.next_window = self.counter + self.window_size;
        if self.next_window != last && self.next_window + 2 * self.window_size >= self.warmup - self.term_buffer {
            self.next_window = last;
        }
    }

    /// Feeds one warmup position. Returns `true` when `inv_metric` was
    /// updated at the end of a slow window.
    pub(crate) fn learn(&mut self, inv_metric: &mut [f64], position: &[f64]) -> bool {
        if self.in_window() {
            self.estimator.add(position);
        }
        let update = self.window_ends();
        if update {
            self.compute_next_window();
            let n = self.estimator.n as f64;
            for (v, s) in inv_metric.iter_mut().zip(&self.estimator.m2) {
                let variance = s / (n - 1.0);
                *v = (n / (n + 5.0)) * variance + 1e-3 * (5.0 / (n + 5.0));
            }
            self.estimator.restart();
        }
        self.counter += 1;
        update
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window_ends(warmup: usize) -> Vec<usize> {
        let mut adapter = MetricAdapter::new(1, warmup);
        let mut metric = [1.0];
        (0..warmup)
            .filter(|&i| adapter.learn(&mut metric, &[i as f64]))
            .collect()
    }

    #[test]
    fn default_schedule_for_thousand_iterations() {
        assert_eq!(window_ends(1000), vec![99, 149, 249, 449, 949]);
    }

    #[test]
    fn short_warmup_uses_proportional_buffers() {
        // 15 / 75 / 10 split of 100 iterations.
        assert_eq!(window_ends(100), vec![89]);
    }

    #[test]
    fn regularized_variance() {
        let mut adapter = MetricAdapter::new(1, 1000);
        let mut metric = [1.0];
        for i in 0..100 {
            adapter.learn(&mut metric, &[(i % 2) as f64]);
        }
        let window: Vec<f64> = (75..100).map(|i| (i % 2) as f64).collect();
        let n = window.len() as f64;
        let mean = window.iter().sum::<f64>() / n;
        let var = window.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let expected = n / (n + 5.0) * var + 1e-3 * 5.0 / (n + 5.0);
        assert!((metric[0] - expected).abs() < 1e-14);
    }

    #[test]
    fn dual_averaging_moves_towards_target() {
        let mut adapter = StepSizeAdapter::new(0.8, 1.0);
        let shrunk = adapter.learn(0.2);
        assert!(shrunk < 10.0);
        let mut adapter = StepSizeAdapter::new(0.8, 1.0);
        let mut eps = 1.0;
        for _ in 0..50 {
            eps = adapter.learn(0.2);
        }
        assert!(eps < 1.0);
        assert!(adapter.final_step_size() < 1.0);
    }
}
