//! Multinomial No-U-Turn transitions with a diagonal metric.

use rand::Rng;
use rand_distr::StandardNormal;

use super::LogDensity;

/// Energy error beyond which a trajectory is flagged divergent.
pub(crate) const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Clone)]
pub(crate) struct Point {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub lp: f64,
}

impl Point {
    pub(crate) fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>) -> Self {
        let dim = q.len();
        let mut point = Self {
            q,
            p: vec![0.0; dim],
            grad: vec![0.0; dim],
            lp: f64::NEG_INFINITY,
        };
        point.evaluate(target);
        point
    }

    fn evaluate<T: LogDensity + ?Sized>(&mut self, target: &T) {
        self.lp = match target.log_density_and_gradient(&self.q, &mut self.grad) {
            Ok(lp) if lp.is_finite() && self.grad.iter().all(|g| g.is_finite()) => lp,
            _ => f64::NEG_INFINITY,
        };
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.lp.is_finite()
    }
}

/// Hamiltonian system with a diagonal inverse metric.
#[derive(Debug, Clone)]
pub(crate) struct Hamiltonian<'a, T: ?Sized> {
    pub target: &'a T,
    pub inv_metric: Vec<f64>,
}

impl<T: LogDensity + ?Sized> Hamiltonian<'_, T> {
    pub(crate) fn energy(&self, z: &Point) -> f64 {
        let kinetic: f64 = z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * p * m).sum();
        let h = -z.lp + 0.5 * kinetic;
        if h.is_nan() {
            f64::INFINITY
        } else {
            h
        }
    }

    pub(crate) fn sample_momentum<R: Rng + ?Sized>(&self, z: &mut Point, rng: &mut R) {
        for (p, m) in z.p.iter_mut().zip(&self.inv_metric) {
            let n: f64 = rng.sample(StandardNormal);
            *p = n / m.sqrt();
        }
    }

    /// Velocity M⁻¹p.
    fn p_sharp(&self, z: &Point) -> Vec<f64> {
        z.p.iter().zip(&self.inv_metric).map(|(p, m)| p * m).collect()
    }

    pub(crate) fn leapfrog(&self, z: &mut Point, epsilon: f64) {
        let half = 0.5 * epsilon;
        for (p, g) in z.p.iter_mut().zip(&z.grad) {
            *p += half * g;
        }
        for ((q, p), m) in z.q.iter_mut().zip(&z.p).zip(&self.inv_metric) {
            *q += epsilon * m * p;
        }
        z.evaluate(self.target);
        if z.is_finite() {
            for (p, g) in z.p.iter_mut().zip(&z.grad) {
                *p += half * g;
            }
        }
    }
}

/// Statistics of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Transition {
    pub accept_stat: f64,
    pub tree_depth: usize,
    pub n_leapfrog: usize,
    pub divergent: bool,
    pub energy: f64,
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

fn no_u_turn(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

/// Mutable state shared through one tree build.
struct TreeState {
    h0: f64,
    epsilon: f64,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Edge momenta of a subtree.
struct Edges {
    p_beg: Vec<f64>,
    p_sharp_beg: Vec<f64>,
    p_end: Vec<f64>,
    p_sharp_end: Vec<f64>,
}

impl Edges {
    fn zeros(dim: usize) -> Self {
        Self {
            p_beg: vec![0.0; dim],
            p_sharp_beg: vec![0.0; dim],
            p_end: vec![0.0; dim],
            p_sharp_end: vec![0.0; dim],
        }
    }
}

pub(crate) struct Nuts<'a, T: ?Sized> {
    pub hamiltonian: Hamiltonian<'a, T>,
    pub epsilon: f64,
    pub max_depth: usize,
}

impl<T: LogDensity + ?Sized> Nuts<'_, T> {
    /// One NUTS transition starting at `z`, which is replaced by the sample.
    pub(crate) fn transition<R: Rng + ?Sized>(&self, z: &mut Point, rng: &mut R) -> Transition {
        let ham = &self.hamiltonian;
        ham.sample_momentum(z, rng);
        let dim = z.q.len();

        let mut z_fwd = z.clone();
        let mut z_bck = z.clone();
        let mut z_sample = z.clone();
        let mut z_propose = z.clone();

        let p_sharp = ham.p_sharp(z);
        let mut p_sharp_fwd_fwd = p_sharp.clone();
        let mut p_fwd_bck = z.p.clone();
        let mut p_sharp_fwd_bck = p_sharp.clone();
        let mut p_bck_fwd = z.p.clone();
        let mut p_sharp_bck_fwd = p_sharp.clone();
        let mut p_sharp_bck_bck = p_sharp;

        let mut rho = z.p.clone();
        let mut log_sum_weight = 0.0;
        let mut state = TreeState {
            h0: ham.energy(z),
            epsilon: self.epsilon,
            n_leapfrog: 0,
            sum_metro_prob: 0.0,
            divergent: false,
        };
        let mut depth = 0;

        while depth < self.max_depth {
            let mut rho_fwd = vec![0.0; dim];
            let mut rho_bck = vec![0.0; dim];
            let mut log_sum_weight_subtree = f64::NEG_INFINITY;
            let valid;

            if rng.random::<f64>() > 0.5 {
                rho_bck.copy_from_slice(&rho);
                p_bck_fwd.copy_from_slice(&p_fwd_bck);
                p_sharp_bck_fwd.copy_from_slice(&p_sharp_fwd_bck);
                let mut edges = Edges::zeros(dim);
                valid = self.build_tree(
                    depth,
                    &mut z_fwd,
                    &mut z_propose,
                    &mut edges,
                    &mut rho_fwd,
                    1.0,
                    &mut state,
                    &mut log_sum_weight_subtree,
                    rng,
                );
                p_fwd_bck = edges.p_beg;
                p_sharp_fwd_bck = edges.p_sharp_beg;
                p_sharp_fwd_fwd = edges.p_sharp_end;
            } else {
                rho_fwd.copy_from_slice(&rho);
                p_fwd_bck.copy_from_slice(&p_bck_fwd);
                p_sharp_fwd_bck.copy_from_slice(&p_sharp_bck_fwd);
                let mut edges = Edges::zeros(dim);
                valid = self.build_tree(
                    depth,
                    &mut z_bck,
                    &mut z_propose,
                    &mut edges,
                    &mut rho_bck,
                    -1.0,
                    &mut state,
                    &mut log_sum_weight_subtree,
                    rng,
                );
                p_bck_fwd = edges.p_beg;
                p_sharp_bck_fwd = edges.p_sharp_beg;
                p_sharp_bck_bck = edges.p_sharp_end;
            }

            if !valid {
                break;
            }
            depth += 1;

            if log_sum_weight_subtree > log_sum_weight {
                z_sample.clone_from(&z_propose);
            } else {
                let accept_prob = (log_sum_weight_subtree - log_sum_weight).exp();
                if rng.random::<f64>() < accept_prob {
                    z_sample.clone_from(&z_propose);
                }
            }
            log_sum_weight = log_sum_exp(log_sum_weight, log_sum_weight_subtree);

            rho = add(&rho_bck, &rho_fwd);
            let mut persist = no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_fwd, &rho);
            let rho_extended = add(&rho_bck, &p_fwd_bck);
            persist &= no_u_turn(&p_sharp_bck_bck, &p_sharp_fwd_bck, &rho_extended);
            let rho_extended = add(&rho_fwd, &p_bck_fwd);
            persist &= no_u_turn(&p_sharp_bck_fwd, &p_sharp_fwd_fwd, &rho_extended);
            if !persist {
                break;
            }
        }

        let energy = ham.energy(&z_sample);
        *z = z_sample;
        Transition {
            accept_stat: state.sum_metro_prob / state.n_leapfrog as f64,
            tree_depth: depth,
            n_leapfrog: state.n_leapfrog,
            divergent: state.divergent,
            energy,
        }
    }

    /// Extends the trajectory from `z` by 2^depth leapfrog steps in the
    /// direction `sign`. Returns `false` on divergence or a sub-tree U-turn.
    #[allow(clippy::too_many_arguments)]
    fn build_tree<R: Rng + ?Sized>(
        &self,
        depth: usize,
        z: &mut Point,
        z_propose: &mut Point,
        edges: &mut Edges,
        rho: &mut [f64],
        sign: f64,
        state: &mut TreeState,
        log_sum_weight: &mut f64,
        rng: &mut R,
    ) -> bool {
        let ham = &self.hamiltonian;
        if depth == 0 {
            ham.leapfrog(z, sign * state.epsilon);
            state.n_leapfrog += 1;
            let h = if z.is_finite() { ham.energy(z) } else { f64::INFINITY };
            if h - state.h0 > MAX_DELTA_H {
                state.divergent = true;
            }
            *log_sum_weight = log_sum_exp(*log_sum_weight, state.h0 - h);
            state.sum_metro_prob += if state.h0 - h > 0.0 { 1.0 } else { (state.h0 - h).exp() };
            z_propose.clone_from(z);
            edges.p_sharp_beg = ham.p_sharp(z);
            edges.p_sharp_end.clone_from(&edges.p_sharp_beg);
            add_assign(rho, &z.p);
            edges.p_beg.clone_from(&z.p);
            edges.p_end.clone_from(&z.p);
            return !state.divergent;
        }

        let dim = z.q.len();

        let mut log_sum_weight_init = f64::NEG_INFINITY;
        let mut rho_init = vec![0.0; dim];
        let mut init = Edges::zeros(dim);
        let valid_init = self.build_tree(
            depth - 1,
            z,
            z_propose,
            &mut init,
            &mut rho_init,
            sign,
            state,
            &mut log_sum_weight_init,
            rng,
        );
        if !valid_init {
            return false;
        }

        let mut z_propose_final = z.clone();
        let mut log_sum_weight_final = f64::NEG_INFINITY;
        let mut rho_final = vec![0.0; dim];
        let mut last = Edges::zeros(dim);
        let valid_final = self.build_tree(
            depth - 1,
            z,
            &mut z_propose_final,
            &mut last,
            &mut rho_final,
            sign,
            state,
            &mut log_sum_weight_final,
            rng,
        );
        if !valid_final {
            return false;
        }

        let log_sum_weight_subtree = log_sum_exp(log_sum_weight_init, log_sum_weight_final);
        *log_sum_weight = log_sum_exp(*log_sum_weight, log_sum_weight_subtree);
        if log_sum_weight_final > log_sum_weight_subtree {
            *z_propose = z_propose_final;
        } else {
            let accept_prob = (log_sum_weight_final - log_sum_weight_subtree).exp();
            if rng.random::<f64>() < accept_prob {
                *z_propose = z_propose_final;
            }
        }

        let rho_subtree = add(&rho_init, &rho_final);
        add_assign(rho, &rho_subtree);

        let mut persist = no_u_turn(&init.p_sharp_beg, &last.p_sharp_end, &rho_subtree);
        let rho_extended = add(&rho_init, &last.p_beg);
        persist &= no_u_turn(&init.p_sharp_beg, &last.p_sharp_beg, &rho_extended);
        let rho_extended = add(&rho_final, &init.p_end);
        persist &= no_u_turn(&init.p_sharp_end, &last.p_sharp_end, &rho_extended);

        edges.p_beg = init.p_beg;
        edges.p_sharp_beg = init.p_sharp_beg;
        edges.p_end = last.p_end;
        edges.p_sharp_end = last.p_sharp_end;
        persist
    }

    /// Doubles or halves ε until a single leapfrog step crosses an
    /// acceptance probability of 0.8.
    pub(crate) fn initial_step_size<R: Rng + ?Sized>(&mut self, z: &Point, rng: &mut R) -> Result<(), String> {
        let ham = &self.hamiltonian;
        let threshold = 0.8_f64.ln();
        let mut direction = 0.0;
        loop {
            let mut trial = z.clone();
            ham.sample_momentum(&mut trial, rng);
            let h0 = ham.energy(&trial);
            ham.leapfrog(&mut trial, self.epsilon);
            let h = if trial.is_finite() { ham.energy(&trial) } else { f64::INFINITY };
            let delta_h = h0 - h;
            if direction == 0.0 {
                direction = if delta_h > threshold { 1.0 } else { -1.0 };
            } else if (direction == 1.0 && !(delta_h > threshold)) || (direction == -1.0 && !(delta_h < threshold)) {
                return Ok(());
            }
            self.epsilon = if direction == 1.0 { 2.0 * self.epsilon } else { 0.5 * self.epsilon };
            if self.epsilon > 1e7 {
                return Err("step size diverged to infinity during initialization".into());
            }
            if self.epsilon == 0.0 {
                return Err("step size collapsed to zero during initialization".into());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::TargetError;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct StdNormal(usize);

    impl LogDensity for StdNormal {
        fn dim(&self) -> usize {
            self.0
        }
        fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> Result<f64, TargetError> {
            for (gi, xi) in g.iter_mut().zip(x) {
                *gi = -xi;
            }
            Ok(-0.5 * dot(x, x))
        }
    }

    #[test]
    fn leapfrog_conserves_energy_at_small_step() {
        let target = StdNormal(5);
        let ham = Hamiltonian {
            target: &target,
            inv_metric: vec![1.0; 5],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut z = Point::new(&target, vec![0.3, -1.0, 2.0, 0.1, -0.7]);
        ham.sample_momentum(&mut z, &mut rng);
        let h0 = ham.energy(&z);
        let mut max_drift: f64 = 0.0;
        for _ in 0..2000 {
            ham.leapfrog(&mut z, 0.001);
            max_drift = max_drift.max((ham.energy(&z) - h0).abs());
        }
        assert!(max_drift < 1e-4, "drift {max_drift}");
    }

    #[test]
    fn leapfrog_is_reversible() {
        let target = StdNormal(3);
        let ham = Hamiltonian {
            target: &target,
            inv_metric: vec![1.0, 2.0, 0.5],
        };
        let mut z = Point::new(&target, vec![0.5, -0.2, 1.0]);
        z.p = vec![0.1, 0.4, -0.3];
        let start = z.clone();
        for _ in 0..10 {
            ham.leapfrog(&mut z, 0.1);
        }
        for _ in 0..10 {
            ham.leapfrog(&mut z, -0.1);
        }
        for (a, b) in z.q.iter().zip(&start.q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transition_statistics_are_consistent() {
        let target = StdNormal(4);
        let nuts = Nuts {
            hamiltonian: Hamiltonian {
                target: &target,
                inv_metric: vec![1.0; 4],
            },
            epsilon: 0.5,
            max_depth: 10,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut z = Point::new(&target, vec![0.0; 4]);
        for _ in 0..200 {
            let t = nuts.transition(&mut z, &mut rng);
            assert!(!t.divergent);
            assert!((0.0..=1.0).contains(&t.accept_stat));
            assert!(t.n_leapfrog >= 1 && t.n_leapfrog < 1 << (t.tree_depth + 1));
            assert!(z.is_finite());
        }
    }
}
