//! Kernel-weighted Shapley estimation for coalition games.
//!
//! Games with few enough players are solved exhaustively: every coalition
//! except the empty and grand ones enters a weighted least-squares fit under
//! the Shapley kernel, with efficiency imposed as a hard constraint. That
//! fit reproduces exact Shapley values. Larger games sample coalitions and
//! add a small ridge term.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Adam, Matrix};

/// How coalitions are drawn once a game is too large to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Sampling {
    /// Enumerate small/large size pairs while their share of the kernel mass
    /// covers them, then sample the remaining sizes in proportion to kernel
    /// mass, each draw paired with its complement.
    KernelShap,
    /// Enumerate sizes `1..=max_size` and their complements first, then draw
    /// sizes uniformly from the rest; draws are importance-weighted back to
    /// the kernel.
    SizeStratified { max_size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSettings {
    /// Coalition evaluations, excluding the empty and grand coalitions.
    pub budget: usize,
    pub ridge: f64,
    pub sampling: Sampling,
    /// Above this many players the surrogate is fitted by mini-batch
    /// descent instead of a direct solve.
    pub direct_solve_limit: usize,
    pub descent_passes: usize,
    pub descent_batch: usize,
}

/// How a game was solved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveInfo {
    pub view: usize,
    pub players: usize,
    pub evaluations: usize,
    pub exhaustive: bool,
    pub solver: String,
    /// 2-norm condition number of the normal matrix, when computed.
    pub condition_number: Option<f64>,
}

/// Shapley kernel weight of a coalition of size `s` among `p` players.
pub fn kernel_weight(p: usize, s: usize) -> f64 {
    if s == 0 || s >= p {
        return 0.0;
    }
    let (pf, sf) = (p as f64, s as f64);
    ((pf - 1.0).ln() - ln_binomial(p as u64, s as u64) - sf.ln() - (pf - sf).ln()).exp()
}

/// Total kernel mass on coalitions of size `s`.
fn size_mass(p: usize, s: usize) -> f64 {
    let (pf, sf) = (p as f64, s as f64);
    (pf - 1.0) / (sf * (pf - sf))
}

fn binomial(p: usize, s: usize) -> f64 {
    ln_binomial(p as u64, s as u64).exp().round()
}

/// Calls `f` with every `s`-subset of `0..p` as a membership vector.
fn for_each_subset(p: usize, s: usize, f: &mut dyn FnMut(&[bool]) -> Result<()>) -> Result<()> {
    let mut idx: Vec<usize> = (0..s).collect();
    let mut z = vec![false; p];
    loop {
        z.fill(false);
        for &i in &idx {
            z[i] = true;
        }
        f(&z)?;
        // advance to the next combination in lexicographic order
        let mut k = s;
        loop {
            if k == 0 {
                return Ok(());
            }
            k -= 1;
            if idx[k] < p - s + k {
                idx[k] += 1;
                for j in k + 1..s {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

struct Samples {
    rows: Vec<Vec<bool>>,
    weights: Vec<f64>,
    values: Vec<f64>,
}

impl Samples {
    fn push(&mut self, z: &[bool], w: f64, v: f64) {
        self.rows.push(z.to_vec());
        self.weights.push(w);
        self.values.push(v);
    }
}

/// Estimates Shapley values of a `p`-player game. `value` maps a membership
/// vector to the payoff.
pub fn solve_game(
    p: usize,
    value: &mut dyn FnMut(&[bool]) -> Result<f64>,
    settings: &GameSettings,
    rng: &mut Rng,
) -> Result<(Vec<f64>, SolveInfo)> {
    let mut info = SolveInfo {
        view: 0,
        players: p,
        evaluations: 0,
        exhaustive: true,
        solver: "exact".into(),
        condition_number: None,
    };
    if p == 0 {
        return Ok((Vec::new(), info));
    }
    let empty = value(&vec![false; p])?;
    let grand = value(&vec![true; p])?;
    info.evaluations = 2;
    let total = grand - empty;
    if p == 1 {
        return Ok((vec![total], info));
    }

    let mut samples = Samples {
        rows: Vec::new(),
        weights: Vec::new(),
        values: Vec::new(),
    };
    let coalitions = if p < 63 { (1u64 << p) - 2 } else { u64::MAX };
    let exhaustive = coalitions <= settings.budget as u64;
    if exhaustive {
        for s in 1..p {
            let w = kernel_weight(p, s);
            for_each_subset(p, s, &mut |z| {
                let v = value(z)?;
                samples.push(z, w, v);
                Ok(())
            })?;
        }
    } else {
        info.exhaustive = false;
        sample_coalitions(p, value, settings, rng, &mut samples)?;
    }
    info.evaluations += samples.rows.len();

    // Eliminate the last player through the efficiency constraint:
    // phi_last = total - sum(others), so phi·z = sum_j phi_j (z_j - z_last) + z_last total.
    let q = p - 1;
    let targets: Vec<f64> = samples
        .rows
        .iter()
        .zip(&samples.values)
        .map(|(z, &v)| v - empty - if z[q] { total } else { 0.0 })
        .collect();
    let design = |z: &[bool], j: usize| -> f64 { f64::from(u8::from(z[j])) - f64::from(u8::from(z[q])) };
    let ridge = if exhaustive { 0.0 } else { settings.ridge };

    let reduced = if p > settings.direct_solve_limit {
        info.solver = "descent".into();
        descend(&samples, &targets, q, ridge, settings, rng, &design)?
    } else {
        info.solver = if exhaustive { "exact" } else { "ridge" }.into();
        let mut a = DMatrix::<f64>::zeros(q, q);
        let mut b = DVector::<f64>::zeros(q);
        let mut x = vec![0.0; q];
        for ((z, &w), &y) in samples.rows.iter().zip(&samples.weights).zip(&targets) {
            for (j, xj) in x.iter_mut().enumerate() {
                *xj = design(z, j);
            }
            for j in 0..q {
                if x[j] == 0.0 {
                    continue;
                }
                b[j] += w * x[j] * y;
                for k in 0..q {
                    a[(j, k)] += w * x[j] * x[k];
                }
            }
        }
        let scale = samples.weights.iter().sum::<f64>().max(f64::MIN_POSITIVE);
        a /= scale;
        b /= scale;
        for j in 0..q {
            a[(j, j)] += ridge;
        }
        if q <= 400 {
            let sv = a.clone().singular_values();
            let (hi, lo) = (sv.max(), sv.min());
            info.condition_number = Some(if lo > 0.0 { hi / lo } else { f64::INFINITY });
        }
        let solved = match a.clone().cholesky() {
            Some(c) => c.solve(&b),
            None => a
                .lu()
                .solve(&b)
                .ok_or_else(|| Error::Internal("singular Shapley regression".into()))?,
        };
        solved.iter().copied().collect()
    };
    let mut phi = reduced;
    let rest: f64 = phi.iter().sum();
    phi.push(total - rest);
    Ok((phi, info))
}

fn sample_coalitions(
    p: usize,
    value: &mut dyn FnMut(&[bool]) -> Result<f64>,
    settings: &GameSettings,
    rng: &mut Rng,
    samples: &mut Samples,
) -> Result<()> {
    let mut budget = settings.budget;
    // sizes s <= p/2 stand for the pair {s, p - s}
    let half = p / 2;
    let pair_count = |s: usize| if 2 * s == p { 1.0 } else { 2.0 };
    let mut done = vec![false; half + 1];
    let mut push_size = |s: usize, samples: &mut Samples, budget: &mut usize| -> Result<()> {
        let w = kernel_weight(p, s);
        for size in [s, p - s] {
            if size == s || 2 * s != p {
                for_each_subset(p, size, &mut |z| {
                    let v = value(z)?;
                    samples.push(z, w, v);
                    Ok(())
                })?;
            }
        }
        *budget = budget.saturating_sub((binomial(p, s) * pair_count(s)) as usize);
        Ok(())
    };

    match settings.sampling {
        Sampling::KernelShap => {
            let mut mass_left: f64 = (1..=half).map(|s| size_mass(p, s) * pair_count(s)).sum();
            for s in 1..=half {
                let n_s = binomial(p, s) * pair_count(s);
                let mass = size_mass(p, s) * pair_count(s);
                if budget as f64 * mass / mass_left + 1e-8 >= n_s {
                    push_size(s, samples, &mut budget)?;
                    done[s] = true;
                    mass_left -= mass;
                } else {
                    break;
                }
            }
        }
        Sampling::SizeStratified { max_size } => {
            for s in 1..=max_size.min(half) {
                let n_s = binomial(p, s) * pair_count(s);
                if n_s > budget as f64 {
                    break;
                }
                push_size(s, samples, &mut budget)?;
                done[s] = true;
            }
        }
    }

    let open: Vec<usize> = (1..=half).filter(|&s| !done[s]).collect();
    if open.is_empty() || budget == 0 {
        return Ok(());
    }
    let masses: Vec<f64> = open.iter().map(|&s| size_mass(p, s) * pair_count(s)).collect();
    let total_mass: f64 = masses.iter().sum();
    let draws = (budget / 2).max(1);
    let mut z = vec![false; p];
    let mut order: Vec<usize> = (0..p).collect();
    let mut pending = Vec::with_capacity(2 * draws);
    for _ in 0..draws {
        let (k, weight) = match settings.sampling {
            Sampling::KernelShap => {
                let mut u = rng.random::<f64>() * total_mass;
                let mut k = open.len() - 1;
                for (i, &m) in masses.iter().enumerate() {
                    if u < m {
                        k = i;
                        break;
                    }
                    u -= m;
                }
                (k, total_mass)
            }
            Sampling::SizeStratified { .. } => {
                let k = rng.random_range(0..open.len());
                (k, masses[k] * open.len() as f64)
            }
        };
        let s = open[k];
        order.shuffle(rng);
        z.fill(false);
        for &i in &order[..s] {
            z[i] = true;
        }
        // a draw stands for the size pair; split its weight over both halves
        let w = weight / draws as f64 / pair_count(s);
        pending.push((z.clone(), w));
        if 2 * s != p {
            let comp: Vec<bool> = z.iter().map(|b| !b).collect();
            pending.push((comp, w));
        }
    }
    for (z, w) in pending {
        let v = value(&z)?;
        samples.push(&z, w, v);
    }
    Ok(())
}

/// Mini-batch Adam on the ridge-regularised weighted least-squares surrogate.
fn descend(
    samples: &Samples,
    targets: &[f64],
    q: usize,
    ridge: f64,
    settings: &GameSettings,
    rng: &mut Rng,
    design: &dyn Fn(&[bool], usize) -> f64,
) -> Result<Vec<f64>> {
    let n = samples.rows.len();
    let mean_w = samples.weights.iter().sum::<f64>() / n.max(1) as f64;
    let mut phi = Matrix::zeros(q, 1);
    let mut opt = Adam::new(0.01, 0.0);
    let mut order: Vec<usize> = (0..n).collect();
    let batch = settings.descent_batch.max(1);
    for _ in 0..settings.descent_passes {
        order.shuffle(rng);
        for chunk in order.chunks(batch) {
            let mut grad = Matrix::zeros(q, 1);
            for &i in chunk {
                let z = &samples.rows[i];
                let pred: f64 = (0..q).map(|j| design(z, j) * phi.get(j, 0)).sum();
                let r = pred - targets[i];
                let w = samples.weights[i] / mean_w;
                for j in 0..q {
                    let x = design(z, j);
                    if x != 0.0 {
                        grad.data_mut()[j] += 2.0 * w * r * x / chunk.len() as f64;
                    }
                }
            }
            for j in 0..q {
                grad.data_mut()[j] += 2.0 * ridge * phi.get(j, 0);
            }
            opt.step(std::iter::once(&mut phi), std::slice::from_ref(&grad))?;
        }
    }
    Ok(phi.into_data())
}
