use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::params::ParamTree;
use crate::rng::{rng_from_seed, ChainRng};

/// Potentials beyond this magnitude count as divergence.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

/// RMSprop decay of the squared-gradient average.
pub const RMS_DECAY: f64 = 0.99;
pub const MASS_EPS: f64 = 1e-8;

#[derive(Clone, Debug)]
pub struct SamplerState {
    pub params: ParamTree,
    pub momenta: ParamTree,
    /// Diagonal mass, one positive value per scalar.
    pub mass: ParamTree,
    pub step: u64,
    pub cycle: usize,
    pub rng: ChainRng,
    /// `∇Ũ` at `params`, reused by the next half-kick.
    pub(crate) grad: Option<ParamTree>,
    /// Most recent gradient estimate, for preconditioning.
    pub(crate) last_grad: Option<ParamTree>,
    sq_avg: ParamTree,
}

impl SamplerState {
    /// Zero momenta, unit mass.
    pub fn new(params: ParamTree, seed: u64) -> Self {
        let momenta = params.zeros_like();
        let mass = params.full_like(1.0);
        let sq_avg = params.zeros_like();
        Self { params, momenta, mass, step: 0, cycle: 0, rng: rng_from_seed(seed), grad: None, last_grad: None, sq_avg }
    }

    pub fn last_grad(&self) -> Option<&ParamTree> {
        self.last_grad.as_ref()
    }

    /// Drops the cached gradient, e.g. after editing `params` directly.
    pub fn invalidate_grad(&mut self) {
        self.grad = None;
    }
}

/// Returns the estimate `Ũ(w)` and `∇Ũ(w)`.
pub type GradFn<'a> = dyn FnMut(&ParamTree) -> Result<(f64, ParamTree)> + 'a;

fn checked(u: f64, g: ParamTree) -> Result<(f64, ParamTree)> {
    if !u.is_finite() {
        return Err(Error::Diverged(format!("non-finite potential {u}")));
    }
    if u.abs() > DIVERGENCE_THRESHOLD {
        return Err(Error::Diverged(format!("|U| = {u:e} exceeds {DIVERGENCE_THRESHOLD:e}")));
    }
    if !g.all_finite() {
        return Err(Error::Diverged("non-finite gradient".into()));
    }
    Ok((u, g))
}

/// Calls `f`, mapping non-finite values (including those caught by the
/// autodiff tape) to divergence.
pub fn eval_checked(f: &mut GradFn<'_>, w: &ParamTree) -> Result<(f64, ParamTree)> {
    match f(w) {
        Ok((u, g)) => checked(u, g),
        Err(Error::NonFinite { node, op }) => Err(Error::Diverged(format!("non-finite value at node {node} ({op})"))),
        Err(e) => Err(e),
    }
}

/// `m ← a·m + sqrt((1−a²)T)·M^{1/2}·ξ`
fn o_step(m: &mut ParamTree, mass: &ParamTree, a: f64, temperature: f64, rng: &mut ChainRng) {
    let c = ((1.0 - a * a) * temperature).max(0.0).sqrt();
    for (me, ma) in m.entries_mut().iter_mut().zip(mass.entries()) {
        let md = me.tensor.data_mut();
        if c == 0.0 {
            md.iter_mut().for_each(|x| *x *= a);
        } else {
            for (x, &mi) in md.iter_mut().zip(ma.tensor.data()) {
                let xi: f64 = rng.sample(StandardNormal);
                *x = a * *x + c * mi.sqrt() * xi;
            }
        }
    }
}

/// `w ← w + h·M⁻¹·m`
fn a_step(w: &mut ParamTree, m: &ParamTree, mass: &ParamTree, h: f64) {
    for ((we, me), ma) in w.entries_mut().iter_mut().zip(m.entries()).zip(mass.entries()) {
        for ((x, &p), &mi) in we.tensor.data_mut().iter_mut().zip(me.tensor.data()).zip(ma.tensor.data()) {
            *x += h * p / mi;
        }
    }
}

/// One OBABO step with O-step decay `a`. Returns `Ũ` at the new position.
/// On error the state is left unchanged.
pub fn obabo_step(state: &mut SamplerState, f: &mut GradFn<'_>, h: f64, a: f64, temperature: f64) -> Result<f64> {
    if !(h > 0.0) || !(0.0..=1.0).contains(&a) || !(temperature >= 0.0) {
        return Err(Error::contract(format!("invalid step: h={h}, a={a}, T={temperature}")));
    }
    let g0 = match state.grad.take() {
        Some(g) => g,
        None => eval_checked(f, &state.params)?.1,
    };
    let mut rng = state.rng.clone();
    let mut m = state.momenta.clone();
    o_step(&mut m, &state.mass, a, temperature, &mut rng);
    m.axpy(-0.5 * h, &g0);
    let mut w = state.params.clone();
    a_step(&mut w, &m, &state.mass, h);
    let (u, g1) = match eval_checked(f, &w) {
        Ok(v) => v,
        Err(e) => {
            state.grad = Some(g0);
            return Err(e);
        }
    };
    m.axpy(-0.5 * h, &g1);
    o_step(&mut m, &state.mass, a, temperature, &mut rng);
    state.params = w;
    state.momenta = m;
    state.rng = rng;
    state.last_grad = Some(g1.clone());
    state.grad = Some(g1);
    state.step += 1;
    Ok(u)
}

/// Underdamped Langevin step with friction `gamma`: `a = exp(−γh/2)`.
pub fn ggmc_step(state: &mut SamplerState, f: &mut GradFn<'_>, h: f64, gamma: f64, temperature: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::contract(format!("friction must be non-negative, got {gamma}")));
    }
    obabo_step(state, f, h, (-gamma * h / 2.0).exp(), temperature)
}

/// `w ← w − h·M⁻¹·∇Ũ + sqrt(2hT)·M^{−1/2}·ξ`. Returns `Ũ` at the old position.
pub fn sgld_step(state: &mut SamplerState, f: &mut GradFn<'_>, h: f64, temperature: f64) -> Result<f64> {
    if !(h > 0.0) || !(temperature >= 0.0) {
        return Err(Error::contract(format!("invalid step: h={h}, T={temperature}")));
    }
    state.grad = None;
    let (u, g) = eval_checked(f, &state.params)?;
    let c = (2.0 * h * temperature).sqrt();
    for ((we, ge), ma) in state.params.entries_mut().iter_mut().zip(g.entries()).zip(state.mass.entries()) {
        for ((x, &gi), &mi) in we.tensor.data_mut().iter_mut().zip(ge.tensor.data()).zip(ma.tensor.data()) {
            *x -= h * gi / mi;
            if c > 0.0 {
                let xi: f64 = state.rng.sample(StandardNormal);
                *x += c * xi / mi.sqrt();
            }
        }
    }
    state.last_grad = Some(g);
    state.step += 1;
    Ok(u)
}

/// RMS-of-gradients diagonal mass, divided by its per-tensor mean and
/// floored at 1, so no coordinate moves faster than without preconditioning.
pub fn update_preconditioner(state: &mut SamplerState, grad: &ParamTree) -> Result<()> {
    state.params.check_layout(grad)?;
    for ((ve, ge), me) in state.sq_avg.entries_mut().iter_mut().zip(grad.entries()).zip(state.mass.entries_mut()) {
        let v = ve.tensor.data_mut();
        for (vi, &gi) in v.iter_mut().zip(ge.tensor.data()) {
            *vi = RMS_DECAY * *vi + (1.0 - RMS_DECAY) * gi * gi;
        }
        let md = me.tensor.data_mut();
        for (mi, &vi) in md.iter_mut().zip(v.iter()) {
            *mi = vi.sqrt() + MASS_EPS;
        }
        let mean = md.iter().sum::<f64>() / md.len().max(1) as f64;
        md.iter_mut().for_each(|mi| *mi = (*mi / mean).max(1.0));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Role;
    use crate::posterior::{QuadraticTarget, Target};
    use crate::tensor::Tensor;

    fn grad_fn(t: &QuadraticTarget) -> impl FnMut(&ParamTree) -> Result<(f64, ParamTree)> + '_ {
        move |w| t.minibatch_grad(w, &[0])
    }

    fn energy(s: &SamplerState, t: &QuadraticTarget) -> f64 {
        t.terms(&s.params).unwrap().potential() + 0.5 * s.momenta.dot(&s.momenta)
    }

    #[test]
    fn leapfrog_energy_error_is_second_order() {
        let t = QuadraticTarget::standard(3);
        let mut errs = Vec::new();
        let hs = [0.1f64, 0.05, 0.025, 0.0125];
        for &h in &hs {
            let mut p = t.layout();
            p.entries_mut()[0].tensor = Tensor::new(vec![3], vec![1.0, -0.5, 0.25]).unwrap();
            let mut s = SamplerState::new(p, 0);
            s.momenta = s.momenta.full_like(0.3);
            let e0 = energy(&s, &t);
            let mut f = grad_fn(&t);
            let mut worst: f64 = 0.0;
            for _ in 0..(2.0 / h).round() as usize {
                ggmc_step(&mut s, &mut f, h, 0.0, 0.0).unwrap();
                worst = worst.max((energy(&s, &t) - e0).abs());
            }
            errs.push(worst);
        }
        for k in 1..hs.len() {
            let slope = (errs[k - 1] / errs[k]).log2();
            assert!((slope - 2.0).abs() < 0.2, "slope {slope} from {errs:?}");
        }
    }

    #[test]
    fn infinite_friction_resamples_momenta() {
        let t = QuadraticTarget::standard(20000);
        let mut s = SamplerState::new(t.layout(), 5);
        s.momenta = s.momenta.full_like(100.0);
        let mut f = grad_fn(&t);
        obabo_step(&mut s, &mut f, 1e-6, 0.0, 0.5).unwrap();
        let m = s.momenta.flatten();
        let var = m.iter().map(|x| x * x).sum::<f64>() / m.len() as f64;
        assert!((var - 0.5).abs() < 0.03, "{var}");
    }

    #[test]
    fn sgld_without_noise_is_gradient_descent() {
        let t = QuadraticTarget::standard(2);
        let mut p = t.layout();
        p.entries_mut()[0].tensor = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let mut s = SamplerState::new(p, 0);
        let mut f = grad_fn(&t);
        sgld_step(&mut s, &mut f, 0.1, 0.0).unwrap();
        assert_eq!(s.params.flatten(), vec![0.9, 1.8]);
    }

    #[test]
    fn sgld_is_deterministic_per_seed() {
        let t = QuadraticTarget::standard(4);
        let run = || {
            let mut s = SamplerState::new(t.layout(), 11);
            let mut f = grad_fn(&t);
            for _ in 0..50 {
                sgld_step(&mut s, &mut f, 0.01, 1.0).unwrap();
            }
            s.params.flatten()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn preconditioner_normalizes() {
        let mut p = ParamTree::new();
        p.push("w", Role::DenseWeight, Tensor::zeros(&[2, 3]));
        let mut s = SamplerState::new(p.clone(), 0);
        for _ in 0..5 {
            update_preconditioner(&mut s, &p.full_like(1.0)).unwrap();
        }
        assert!(s.mass.flatten().iter().all(|&m| (m - 1.0).abs() < 1e-12));
        let mut s = SamplerState::new(p.clone(), 0);
        update_preconditioner(&mut s, &p).unwrap();
        assert!(s.mass.flatten().iter().all(|&m| (m - 1.0).abs() < 1e-12));
        let mut g = p.clone();
        g.entries_mut()[0].tensor.data_mut()[0] = 3.0;
        update_preconditioner(&mut s, &g).unwrap();
        let m = s.mass.flatten();
        assert!(m[0] > 1.0);
        assert!(m[1..].iter().all(|&x| x == 1.0));
    }

    #[test]
    fn divergence_leaves_state_unchanged() {
        let mut p = ParamTree::new();
        p.push("w", Role::Bias, Tensor::from_vec(vec![1.0]));
        let mut s = SamplerState::new(p, 0);
        let before = s.params.clone();
        let mut f = |w: &ParamTree| -> Result<(f64, ParamTree)> {
            let x = w.entries()[0].tensor.data()[0];
            if x > 1.0 {
                Ok((f64::NAN, w.clone()))
            } else {
                Ok((0.0, w.full_like(-1.0)))
            }
        };
        let e = ggmc_step(&mut s, &mut f, 0.5, 1.0, 0.0).unwrap_err();
        assert!(matches!(e, Error::Diverged(_)));
        assert_eq!(s.params, before);
        assert_eq!(s.step, 0);
    }
}
