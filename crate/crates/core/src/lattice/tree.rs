use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{FieldExpr, Point, Var};
use crate::lattice::GridSpec;
use crate::model::ModelSpec;
use crate::uncertainty::{Mode, UncertaintyBox};

/// Largest number of policies any enumeration may visit.
pub const POLICY_BUDGET: f64 = 1e6;

/// Small recombining trinomial tree for `dX = α dB`: from `x` the walk moves
/// to `x ± h` with probability `p(a) = a·Δt/(2h²)` each and stays otherwise,
/// where `a` is the variance rate chosen at the node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSpec {
    pub steps: usize,
    pub h: f64,
    pub x0: f64,
    pub dt: f64,
    pub controls: Vec<f64>,
}

/// Running rewards on a tree. `g` is collected at the node reached by each
/// step, `f·a` at the node the step leaves; both are time-stamped with the
/// step's end time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TreeRunning {
    pub g: Option<FieldExpr>,
    pub f: Option<FieldExpr>,
}

impl TreeSpec {
    pub fn new(steps: usize, h: f64, x0: f64, dt: f64, controls: Vec<f64>) -> Result<TreeSpec> {
        let t = TreeSpec {
            steps,
            h,
            x0,
            dt,
            controls,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=6).contains(&self.steps) {
            return Err(Error::Invalid(format!("tree steps {} not in 1..=6", self.steps)));
        }
        if !(self.h > 0.0 && self.dt > 0.0 && self.x0.is_finite()) {
            return Err(Error::Invalid("tree needs h > 0, dt > 0 and a finite root".into()));
        }
        if self.controls.is_empty() {
            return Err(Error::Invalid("tree control set is empty".into()));
        }
        for &a in &self.controls {
            let p = self.prob(a);
            if !(a >= 0.0 && (0.0..=0.5).contains(&p)) {
                return Err(Error::Invalid(format!(
                    "control {a} gives move probability {p} outside [0, 1/2]"
                )));
            }
        }
        Ok(())
    }

    /// Probability of each of the two moves under variance rate `a`.
    pub fn prob(&self, a: f64) -> f64 {
        a * self.dt / (2.0 * self.h * self.h)
    }

    pub fn x(&self, offset: i64) -> f64 {
        self.x0 + offset as f64 * self.h
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn lo(&self) -> f64 {
        self.controls.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn hi(&self) -> f64 {
        self.controls.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Decision nodes of the recombining tree: `Σ_{n<m} (2n+1) = m²`.
    pub fn markov_nodes(&self) -> usize {
        self.steps * self.steps
    }

    /// Lattice setup reproducing this tree exactly: unit volatility, box
    /// `[min A, max A]`, spacing `h`, one grid step per tree step and one
    /// spare node beyond the reachable range on each side.
    pub fn lattice_setup(
        &self,
        payoff: &FieldExpr,
        running: &TreeRunning,
    ) -> Result<(ModelSpec, GridSpec, usize)> {
        let m = self.steps;
        let reach = (m + 1) as f64 * self.h;
        let grid = GridSpec::uniform(self.x0 - reach, self.x0 + reach, 2 * m + 3, self.horizon(), m)?;
        let mut model = ModelSpec::heat(UncertaintyBox::single(self.lo(), self.hi())?, payoff.clone(), Mode::Inf);
        if let Some(g) = &running.g {
            model.driver_g = g.clone();
        }
        if let Some(f) = &running.f {
            model.driver_f[0] = f.clone();
        }
        Ok((model, grid, m + 1))
    }
}

fn check_running(payoff: &FieldExpr, running: &TreeRunning) -> Result<()> {
    for e in std::iter::once(payoff).chain(running.g.iter()).chain(running.f.iter()) {
        if e.uses(Var::Y) {
            return Err(Error::Invalid(format!(
                "`{e}` depends on y; policy enumeration needs y-free rewards"
            )));
        }
    }
    if payoff.uses(Var::T) {
        return Err(Error::Invalid("payoff may not depend on t".into()));
    }
    Ok(())
}

/// Optimum over every Markov policy (node → control) of the linear
/// expectation of `payoff(X_m)` plus running rewards, computed by forward
/// enumeration of all `3^m` paths under each policy.
pub fn brute_force_expectation(
    tree: &TreeSpec,
    payoff: &FieldExpr,
    running: &TreeRunning,
    mode: Mode,
) -> Result<f64> {
    tree.validate()?;
    check_running(payoff, running)?;
    let m = tree.steps;
    let na = tree.controls.len();
    let nodes = tree.markov_nodes();
    let count = (na as f64).powi(nodes as i32);
    if count > POLICY_BUDGET {
        return Err(Error::Budget {
            count,
            budget: POLICY_BUDGET,
        });
    }
    let count = count as usize;

    // Rewards are policy independent apart from the control factor; precompute them.
    let node_index = |n: usize, off: i64| n * n + (off + n as i64) as usize;
    let mut terminal = vec![0.0; 2 * m + 1];
    for (i, slot) in terminal.iter_mut().enumerate() {
        *slot = payoff.eval(&Point::x(&[tree.x(i as i64 - m as i64)]))?;
    }
    let eval_at = |e: &Option<FieldExpr>, t: f64, x: f64| -> Result<f64> {
        match e {
            Some(e) => e.eval(&Point {
                t: Some(t),
                x: &[x],
                y: None,
            }),
            None => Ok(0.0),
        }
    };
    // g at (n, off) for n = 1..=m, f at (n, off) for n = 0..m (time t_{n+1}).
    let mut g_at = vec![0.0; (m + 1) * (m + 1)];
    let mut f_at = vec![0.0; nodes];
    for n in 0..=m {
        for off in -(n as i64)..=(n as i64) {
            if n >= 1 {
                g_at[node_index(n, off)] = eval_at(&running.g, tree.time(n), tree.x(off))?;
            }
            if n < m {
                f_at[node_index(n, off)] = eval_at(&running.f, tree.time(n + 1), tree.x(off))?;
            }
        }
    }

    let paths = 3usize.pow(m as u32);
    let mut choice = vec![0usize; nodes];
    let mut best: Option<f64> = None;
    for policy in 0..count {
        let mut rest = policy;
        for c in choice.iter_mut() {
            *c = rest % na;
            rest /= na;
        }
        let mut total = 0.0;
        for path in 0..paths {
            let mut code = path;
            let mut off: i64 = 0;
            let mut prob = 1.0;
            let mut reward = 0.0;
            for n in 0..m {
                let a = tree.controls[choice[node_index(n, off)]];
                reward += tree.dt * a * f_at[node_index(n, off)];
                let p = tree.prob(a);
                let mv = (code % 3) as i64 - 1;
                code /= 3;
                prob *= if mv == 0 { 1.0 - 2.0 * p } else { p };
                off += mv;
                reward += tree.dt * g_at[node_index(n + 1, off)];
            }
            if prob != 0.0 {
                total += prob * (terminal[(off + m as i64) as usize] + reward);
            }
        }
        best = Some(match best {
            Some(b) if !mode.better(total, b) => b,
            _ => total,
        });
    }
    Ok(best.unwrap_or(0.0))
}
