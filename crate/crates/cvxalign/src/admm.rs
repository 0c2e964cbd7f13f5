//! ADMM solver for the slack-form program, with PCG inner solves.
//!
//! Each iteration takes four steps:
//!
//! 1. u-update: solve the strongly convex quadratic
//!    `min_u ||Fu - y||^2 + (rho/2)||u - v + lambda||^2 + (rho/2)||Gu - s + nu||^2`
//!    through its normal equations
//!    `(2 F'F + rho I + rho G'G) u = 2 F'y + rho (v - lambda) + rho G'(s - nu)`
//!    by preconditioned conjugate gradient to an inner tolerance that
//!    tightens along a summable schedule.
//! 2. v-update: blockwise soft threshold of `u + lambda` at `beta_reg / rho`;
//!    s-update: projection of `Gu + nu` onto the nonnegative orthant.
//! 3./4. dual ascent on both splits with step `gamma_alpha / rho`.
//!
//! The solver records last-iterate and ergodic (running mean) residuals each
//! iteration; the ergodic ones decay like 1/K.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::program::{
    apply_f, apply_f_transpose, apply_g, apply_g_transpose, group_soft_threshold, ConvexProgram,
    GroupVector,
};

/// Inner-solve tolerance schedule `delta_k = delta0 / k^exponent`.
///
/// Any exponent above 1 keeps the sequence summable.
#[derive(Debug, Clone, Copy)]
pub struct PcgTolSchedule {
    pub delta0: f64,
    pub exponent: f64,
}

impl PcgTolSchedule {
    pub fn at(&self, k: usize) -> f64 {
        self.delta0 / (k as f64).powf(self.exponent)
    }
}

impl Default for PcgTolSchedule {
    fn default() -> Self {
        Self {
            delta0: 1e-3,
            exponent: 1.5,
        }
    }
}

/// Solver configuration. `gamma_alpha = None` defaults to `rho`, which makes
/// the dual step the standard scaled-ADMM unit step.
#[derive(Debug, Clone)]
pub struct AdmmConfig {
    pub rho: f64,
    pub gamma_alpha: Option<f64>,
    pub max_iters: usize,
    pub pcg_tol_schedule: PcgTolSchedule,
    pub pcg_max_iters: usize,
    pub stop_tol: f64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            rho: 0.01,
            gamma_alpha: None,
            max_iters: 1000,
            pcg_tol_schedule: PcgTolSchedule::default(),
            pcg_max_iters: 500,
            stop_tol: 1e-6,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::InvalidInput(format!(
                "penalty rho must be positive, got {}",
                self.rho
            )));
        }
        if let Some(ga) = self.gamma_alpha {
            if !(ga > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "dual step scale gamma_alpha must be positive, got {ga}"
                )));
            }
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidInput("max_iters must be >= 1".into()));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::InvalidInput("stop_tol must be nonnegative".into()));
        }
        if !(self.pcg_tol_schedule.delta0 > 0.0) || !(self.pcg_tol_schedule.exponent > 1.0) {
            return Err(Error::InvalidInput(
                "pcg tolerance schedule needs delta0 > 0 and exponent > 1".into(),
            ));
        }
        Ok(())
    }

    pub fn dual_step(&self) -> f64 {
        self.gamma_alpha.unwrap_or(self.rho) / self.rho
    }
}

/// Residual pair for one iterate: split residual and slack residual.
#[derive(Debug, Clone, Copy)]
pub struct ResidualRecord {
    pub r_uv: f64,
    pub r_gs: f64,
    pub r_uv_ergodic: f64,
    pub r_gs_ergodic: f64,
}

impl ResidualRecord {
    pub fn combined(&self) -> f64 {
        (self.r_uv * self.r_uv + self.r_gs * self.r_gs).sqrt()
    }

    pub fn combined_ergodic(&self) -> f64 {
        (self.r_uv_ergodic * self.r_uv_ergodic + self.r_gs_ergodic * self.r_gs_ergodic).sqrt()
    }
}

/// Mutable iterate bundle owned by one solve.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub u: GroupVector,
    pub v: GroupVector,
    pub s: Array1<f64>,
    pub lambda: GroupVector,
    pub nu: Array1<f64>,
    pub iter: usize,
    u_sum: Array1<f64>,
    v_sum: Array1<f64>,
    s_sum: Array1<f64>,
    gu_sum: Array1<f64>,
}

impl AdmmState {
    fn zeros(prog: &ConvexProgram) -> Self {
        Self {
            u: prog.zero_group_vector(),
            v: prog.zero_group_vector(),
            s: prog.zero_slack(),
            lambda: prog.zero_group_vector(),
            nu: prog.zero_slack(),
            iter: 0,
            u_sum: Array1::zeros(prog.var_dim()),
            v_sum: Array1::zeros(prog.var_dim()),
            s_sum: Array1::zeros(prog.slack_dim()),
            gu_sum: Array1::zeros(prog.slack_dim()),
        }
    }

    pub fn ergodic_u(&self, d: usize) -> GroupVector {
        let k = self.iter.max(1) as f64;
        GroupVector::new(&self.u_sum / k, d).expect("ergodic shape")
    }

    pub fn ergodic_v(&self, d: usize) -> GroupVector {
        let k = self.iter.max(1) as f64;
        GroupVector::new(&self.v_sum / k, d).expect("ergodic shape")
    }

    pub fn ergodic_s(&self) -> Array1<f64> {
        &self.s_sum / self.iter.max(1) as f64
    }

    fn is_finite(&self) -> bool {
        self.u.is_finite()
            && self.v.is_finite()
            && self.lambda.is_finite()
            && self.s.iter().all(|a| a.is_finite())
            && self.nu.iter().all(|a| a.is_finite())
    }
}

/// Output of one solve: final and ergodic primal points plus full traces.
#[derive(Debug, Clone)]
pub struct AdmmSolution {
    pub u_final: GroupVector,
    pub v_final: GroupVector,
    pub s_final: Array1<f64>,
    pub u_ergodic: GroupVector,
    pub v_ergodic: GroupVector,
    pub s_ergodic: Array1<f64>,
    pub objective_trace: Vec<f64>,
    pub residual_trace: Vec<ResidualRecord>,
    pub pcg_iters_trace: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl AdmmSolution {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("at least one iteration")
    }

    /// CSV export with one row per iteration.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iter,objective,r_uv,r_gs,pcg_iters\n");
        for (i, ((obj, res), pcg)) in self
            .objective_trace
            .iter()
            .zip(&self.residual_trace)
            .zip(&self.pcg_iters_trace)
            .enumerate()
        {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                obj,
                res.r_uv,
                res.r_gs,
                pcg
            ));
        }
        out
    }
}

/// Split residuals `(||u - v||, ||Gu - s||)` at an arbitrary point.
pub fn residuals(
    prog: &ConvexProgram,
    u: &GroupVector,
    v: &GroupVector,
    s: ArrayView1<'_, f64>,
) -> Result<(f64, f64)> {
    let r_uv = norm(&(u.data() - v.data()));
    let gu = apply_g(prog, u)?;
    let r_gs = norm(&(&gu - &s));
    Ok((r_uv, r_gs))
}

/// Diagonal of `2 F'F + rho I + rho G'G`, accumulated column by column
/// without materializing either operator. The signed blocks of `G` square
/// away, so its diagonal contribution is the plain column norm of `X`.
fn jacobi_diagonal(prog: &ConvexProgram, rho: f64) -> Array1<f64> {
    let (n, d, p) = (prog.n(), prog.d(), prog.num_patterns());
    let x = prog.x().values();
    let mut col_sq = vec![0.0; d];
    for l in 0..d {
        col_sq[l] = x.column(l).iter().map(|a| a * a).sum();
    }
    let mut diag = Array1::zeros(2 * d * p);
    for i in 0..p {
        let mask = prog.patterns().get(i).mask();
        for l in 0..d {
            let mut masked_sq = 0.0;
            for j in 0..n {
                if mask[j] {
                    masked_sq += x[[j, l]] * x[[j, l]];
                }
            }
            let entry = 2.0 * masked_sq + rho + rho * col_sq[l];
            diag[i * d + l] = entry;
            diag[(p + i) * d + l] = entry;
        }
    }
    diag
}

/// Result of a PCG run.
#[derive(Debug, Clone)]
pub struct PcgResult {
    pub x: Array1<f64>,
    pub iters: usize,
    pub residual_norm: f64,
    pub converged: bool,
}

/// Preconditioned conjugate gradient for a symmetric positive definite
/// operator. Stops when `||op(x) - rhs|| <= tol * max(1, ||rhs||)`; after
/// `max_iters` the best iterate is returned with `converged = false`.
/// Detected negative curvature is an error.
pub fn pcg_solve<F>(
    op: F,
    rhs: &Array1<f64>,
    precond_diag: &Array1<f64>,
    x0: Option<&Array1<f64>>,
    tol: f64,
    max_iters: usize,
) -> Result<PcgResult>
where
    F: Fn(&Array1<f64>) -> Array1<f64>,
{
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("pcg tol must be positive, got {tol}")));
    }
    if precond_diag.len() != rhs.len() {
        return Err(Error::shape(rhs.len(), precond_diag.len(), "pcg preconditioner"));
    }
    if precond_diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::SolverFailure(
            "pcg preconditioner has nonpositive diagonal entries".into(),
        ));
    }
    let threshold = tol * norm(rhs).max(1.0);
    let mut x = match x0 {
        Some(start) => {
            if start.len() != rhs.len() {
                return Err(Error::shape(rhs.len(), start.len(), "pcg warm start"));
            }
            start.clone()
        }
        None => Array1::zeros(rhs.len()),
    };
    let mut r = rhs - &op(&x);
    let mut res_norm = norm(&r);
    if res_norm <= threshold {
        return Ok(PcgResult {
            x,
            iters: 0,
            residual_norm: res_norm,
            converged: true,
        });
    }
    let mut z = &r / precond_diag;
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    for iter in 1..=max_iters {
        let ap = op(&p);
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(Error::SolverFailure(format!(
                "pcg detected nonpositive curvature p'Ap = {pap} at iteration {iter}"
            )));
        }
        let alpha = rz / pap;
        x.scaled_add(alpha, &p);
        r.scaled_add(-alpha, &ap);
        res_norm = norm(&r);
        if !res_norm.is_finite() {
            return Err(Error::SolverFailure("pcg residual became non-finite".into()));
        }
        if res_norm <= threshold {
            return Ok(PcgResult {
                x,
                iters: iter,
                residual_norm: res_norm,
                converged: true,
            });
        }
        z = &r / precond_diag;
        let rz_next = r.dot(&z);
        let beta = rz_next / rz;
        p = &z + &(&p * beta);
        rz = rz_next;
    }
    Ok(PcgResult {
        x,
        iters: max_iters,
        residual_norm: res_norm,
        converged: false,
    })
}

/// Run the ADMM loop on an assembled program.
pub fn solve(prog: &ConvexProgram, cfg: &AdmmConfig) -> Result<AdmmSolution> {
    cfg.validate()?;
    let d = prog.d();
    let rho = cfg.rho;
    let dual_step = cfg.dual_step();
    let diag = jacobi_diagonal(prog, rho);
    let two_fty = {
        let mut fty = apply_f_transpose(prog, prog.y().view())?;
        fty.data_mut().mapv_inplace(|a| 2.0 * a);
        fty
    };

    let normal_op = |w: &Array1<f64>| -> Array1<f64> {
        let gv = GroupVector::new(w.clone(), d).expect("pcg operand shape");
        let fu = apply_f(prog, &gv).expect("operator shapes fixed");
        let mut out = apply_f_transpose(prog, fu.view())
            .expect("operator shapes fixed")
            .into_data()
            * 2.0;
        let gu = apply_g(prog, &gv).expect("operator shapes fixed");
        let gtgu = apply_g_transpose(prog, gu.view()).expect("operator shapes fixed");
        out.scaled_add(rho, gtgu.data());
        out.scaled_add(rho, w);
        out
    };

    let mut state = AdmmState::zeros(prog);
    let mut objective_trace = Vec::new();
    let mut residual_trace: Vec<ResidualRecord> = Vec::new();
    let mut pcg_iters_trace = Vec::new();
    let mut converged = false;

    for k in 1..=cfg.max_iters {
        // u-update through the normal equations, warm-started at u^k
        let mut rhs = two_fty.data().clone();
        rhs.scaled_add(rho, &(state.v.data() - state.lambda.data()));
        let slack_gap = &state.s - &state.nu;
        let gt = apply_g_transpose(prog, slack_gap.view())?;
        rhs.scaled_add(rho, gt.data());
        let pcg = pcg_solve(
            &normal_op,
            &rhs,
            &diag,
            Some(state.u.data()),
            cfg.pcg_tol_schedule.at(k),
            cfg.pcg_max_iters,
        )
        .map_err(|e| Error::SolverFailure(format!("u-update failed at iteration {k}: {e}")))?;
        state.u = GroupVector::new(pcg.x, d)?;
        pcg_iters_trace.push(pcg.iters);

        // v-update and s-update split over the two constraints
        let shift = GroupVector::new(state.u.data() + state.lambda.data(), d)?;
        state.v = group_soft_threshold(&shift, prog.beta_reg() / rho)?;
        let gu = apply_g(prog, &state.u)?;
        state.s = (&gu + &state.nu).mapv(|a| a.max(0.0));

        // dual ascent
        state
            .lambda
            .data_mut()
            .scaled_add(dual_step, &(state.u.data() - state.v.data()));
        state.nu.scaled_add(dual_step, &(&gu - &state.s));

        state.iter = k;
        if !state.is_finite() {
            return Err(Error::SolverFailure(format!(
                "non-finite iterate detected at iteration {k}"
            )));
        }

        state.u_sum += state.u.data();
        state.v_sum += state.v.data();
        state.s_sum += &state.s;
        state.gu_sum += &gu;

        let r_uv = norm(&(state.u.data() - state.v.data()));
        let r_gs = norm(&(&gu - &state.s));
        let kf = k as f64;
        let r_uv_ergodic = norm(&(&state.u_sum / kf - &(&state.v_sum / kf)));
        let r_gs_ergodic = norm(&(&state.gu_sum / kf - &(&state.s_sum / kf)));
        residual_trace.push(ResidualRecord {
            r_uv,
            r_gs,
            r_uv_ergodic,
            r_gs_ergodic,
        });

        let fit = {
            let residual = apply_f(prog, &state.u)? - prog.y();
            residual.iter().map(|a| a * a).sum::<f64>()
        };
        objective_trace.push(fit + prog.beta_reg() * state.v.norm_2_1());

        if r_uv.max(r_gs) <= cfg.stop_tol {
            converged = true;
            break;
        }
    }

    Ok(AdmmSolution {
        u_ergodic: state.ergodic_u(d),
        v_ergodic: state.ergodic_v(d),
        s_ergodic: state.ergodic_s(),
        u_final: state.u,
        v_final: state.v,
        s_final: state.s,
        objective_trace,
        residual_trace,
        pcg_iters_trace,
        iterations: state.iter,
        converged,
    })
}

fn norm(v: &Array1<f64>) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}
