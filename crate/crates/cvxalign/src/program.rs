//! The slack-form convex program behind the two-layer ReLU reformulation.
//!
//! Variables live in a stacked group vector `u` of length `2*d*P`: groups
//! `0..P` are the positive directions `v_i`, groups `P..2P` the negative
//! directions `w_i`. The residual map is
//!
//! ```text
//! F u = sum_i D_i X v_i - sum_i D_i X w_i          (n rows)
//! G u = [(2D_i - I) X v_i ; (2D_i - I) X w_i]      (2 n P rows, block diagonal)
//! ```
//!
//! and the objective is `||F u - y||^2 + beta_reg * sum_g ||v_g||_2` plus the
//! nonnegativity indicator on the slack `s`. Both operators are applied
//! matrix-free; a dense materialization exists only in the oracle module.

use ndarray::{Array1, ArrayView1, ArrayViewMut1};

use crate::error::{Error, Result};
use crate::patterns::{DataMatrix, PatternSet, EPSILON_CONE};

/// Marker returned by [`objective`] when the slack indicator is violated.
pub const OBJECTIVE_INFEASIBLE: f64 = f64::INFINITY;

/// Assembled program instance: data, patterns, targets, regularization.
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    x: DataMatrix,
    patterns: PatternSet,
    y: Array1<f64>,
    beta_reg: f64,
}

impl ConvexProgram {
    pub fn new(x: DataMatrix, patterns: PatternSet, y: Array1<f64>, beta_reg: f64) -> Result<Self> {
        if patterns.is_empty() {
            return Err(Error::InvalidInput("pattern set is empty".into()));
        }
        if patterns.n() != x.n() || patterns.d() != x.d() {
            return Err(Error::shape(
                format!("{}x{}", x.n(), x.d()),
                format!("{}x{}", patterns.n(), patterns.d()),
                "pattern set vs data matrix",
            ));
        }
        if y.len() != x.n() {
            return Err(Error::shape(x.n(), y.len(), "target vector"));
        }
        if y.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("target vector"));
        }
        if !(beta_reg >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "regularization strength must be nonnegative, got {beta_reg}"
            )));
        }
        Ok(Self {
            x,
            patterns,
            y,
            beta_reg,
        })
    }

    pub fn x(&self) -> &DataMatrix {
        &self.x
    }

    pub fn patterns(&self) -> &PatternSet {
        &self.patterns
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn beta_reg(&self) -> f64 {
        self.beta_reg
    }

    pub fn n(&self) -> usize {
        self.x.n()
    }

    pub fn d(&self) -> usize {
        self.x.d()
    }

    pub fn num_patterns(&self) -> usize {
        self.patterns.len()
    }

    /// Length of the stacked variable: 2 * d * P.
    pub fn var_dim(&self) -> usize {
        2 * self.d() * self.num_patterns()
    }

    /// Length of the slack vector: 2 * n * P.
    pub fn slack_dim(&self) -> usize {
        2 * self.n() * self.num_patterns()
    }

    pub fn zero_group_vector(&self) -> GroupVector {
        GroupVector::zeros(self.num_patterns(), self.d())
    }

    pub fn zero_slack(&self) -> Array1<f64> {
        Array1::zeros(self.slack_dim())
    }
}

/// Stacked variable of 2P contiguous groups of length d.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupVector {
    data: Array1<f64>,
    group_len: usize,
}

impl GroupVector {
    pub fn new(data: Array1<f64>, group_len: usize) -> Result<Self> {
        if group_len == 0 || data.len() % group_len != 0 {
            return Err(Error::shape(
                format!("multiple of {group_len}"),
                data.len(),
                "group vector",
            ));
        }
        Ok(Self { data, group_len })
    }

    pub fn zeros(num_patterns: usize, d: usize) -> Self {
        Self {
            data: Array1::zeros(2 * num_patterns * d),
            group_len: d,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn group_len(&self) -> usize {
        self.group_len
    }

    pub fn num_groups(&self) -> usize {
        self.data.len() / self.group_len
    }

    pub fn data(&self) -> &Array1<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array1<f64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array1<f64> {
        self.data
    }

    pub fn group(&self, g: usize) -> ArrayView1<'_, f64> {
        let d = self.group_len;
        self.data.slice(ndarray::s![g * d..(g + 1) * d])
    }

    pub fn group_mut(&mut self, g: usize) -> ArrayViewMut1<'_, f64> {
        let d = self.group_len;
        self.data.slice_mut(ndarray::s![g * d..(g + 1) * d])
    }

    pub fn group_norm(&self, g: usize) -> f64 {
        self.group(g).iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    /// Sum of Euclidean group norms (the 2,1 norm).
    pub fn norm_2_1(&self) -> f64 {
        (0..self.num_groups()).map(|g| self.group_norm(g)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }
}

fn check_group_shape(prog: &ConvexProgram, u: &GroupVector, context: &'static str) -> Result<()> {
    if u.group_len() != prog.d() || u.len() != prog.var_dim() {
        return Err(Error::shape(
            format!("{} in groups of {}", prog.var_dim(), prog.d()),
            format!("{} in groups of {}", u.len(), u.group_len()),
            context,
        ));
    }
    Ok(())
}

/// `F u`: masked data action summed over patterns, v-groups minus w-groups.
pub fn apply_f(prog: &ConvexProgram, u: &GroupVector) -> Result<Array1<f64>> {
    check_group_shape(prog, u, "apply_f input")?;
    let p = prog.num_patterns();
    let mut out = Array1::zeros(prog.n());
    for i in 0..p {
        let tv = prog.x.apply(u.group(i));
        let tw = prog.x.apply(u.group(p + i));
        let mask = prog.patterns.get(i).mask();
        for (j, &active) in mask.iter().enumerate() {
            if active {
                out[j] += tv[j] - tw[j];
            }
        }
    }
    Ok(out)
}

/// Adjoint of `F`: scatter a residual back into the 2P groups.
pub fn apply_f_transpose(prog: &ConvexProgram, r: ArrayView1<'_, f64>) -> Result<GroupVector> {
    if r.len() != prog.n() {
        return Err(Error::shape(prog.n(), r.len(), "apply_f_transpose input"));
    }
    let p = prog.num_patterns();
    let d = prog.d();
    let mut out = prog.zero_group_vector();
    let mut masked = Array1::zeros(prog.n());
    for i in 0..p {
        let mask = prog.patterns.get(i).mask();
        for j in 0..prog.n() {
            masked[j] = if mask[j] { r[j] } else { 0.0 };
        }
        // X^T (D_i r), positive for the v-group and negated for the w-group.
        for l in 0..d {
            let col = prog.x.values().column(l);
            let acc = col.dot(&masked);
            out.group_mut(i)[l] = acc;
            out.group_mut(p + i)[l] = -acc;
        }
    }
    Ok(out)
}

/// `G u`: per-group signed action `(2D_i - I) X` stacked over 2P blocks.
pub fn apply_g(prog: &ConvexProgram, u: &GroupVector) -> Result<Array1<f64>> {
    check_group_shape(prog, u, "apply_g input")?;
    let p = prog.num_patterns();
    let n = prog.n();
    let mut out = Array1::zeros(prog.slack_dim());
    for g in 0..2 * p {
        let pattern = prog.patterns.get(g % p);
        let t = prog.x.apply(u.group(g));
        let signed = pattern.signed(&t);
        out.slice_mut(ndarray::s![g * n..(g + 1) * n]).assign(&signed);
    }
    Ok(out)
}

/// Adjoint of `G`.
pub fn apply_g_transpose(prog: &ConvexProgram, s: ArrayView1<'_, f64>) -> Result<GroupVector> {
    if s.len() != prog.slack_dim() {
        return Err(Error::shape(prog.slack_dim(), s.len(), "apply_g_transpose input"));
    }
    let p = prog.num_patterns();
    let n = prog.n();
    let d = prog.d();
    let mut out = prog.zero_group_vector();
    let mut signed = Array1::zeros(n);
    for g in 0..2 * p {
        let mask = prog.patterns.get(g % p).mask();
        let block = s.slice(ndarray::s![g * n..(g + 1) * n]);
        for j in 0..n {
            signed[j] = if mask[j] { block[j] } else { -block[j] };
        }
        for l in 0..d {
            out.group_mut(g)[l] = prog.x.values().column(l).dot(&signed);
        }
    }
    Ok(out)
}

/// Full objective `||F u - y||^2 + beta_reg * ||v||_{2,1} + I_{>=0}(s)`.
///
/// Returns [`OBJECTIVE_INFEASIBLE`] when any slack entry is below the cone
/// tolerance.
pub fn objective(
    prog: &ConvexProgram,
    u: &GroupVector,
    v: &GroupVector,
    s: ArrayView1<'_, f64>,
) -> Result<f64> {
    check_group_shape(prog, u, "objective u")?;
    check_group_shape(prog, v, "objective v")?;
    if s.len() != prog.slack_dim() {
        return Err(Error::shape(prog.slack_dim(), s.len(), "objective slack"));
    }
    if s.iter().any(|&e| e < -EPSILON_CONE) {
        return Ok(OBJECTIVE_INFEASIBLE);
    }
    let residual = apply_f(prog, u)? - prog.y();
    let fit = residual.iter().map(|a| a * a).sum::<f64>();
    Ok(fit + prog.beta_reg * v.norm_2_1())
}

/// Blockwise soft threshold: each group shrinks toward zero by `tau` in
/// Euclidean norm and vanishes at or below the threshold.
pub fn group_soft_threshold(z: &GroupVector, tau: f64) -> Result<GroupVector> {
    if !(tau >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "soft threshold requires tau >= 0, got {tau}"
        )));
    }
    let mut out = z.clone();
    for g in 0..out.num_groups() {
        let norm = out.group_norm(g);
        let mut group = out.group_mut(g);
        if norm <= tau {
            group.fill(0.0);
        } else {
            let scale = 1.0 - tau / norm;
            group.mapv_inplace(|a| a * scale);
        }
    }
    Ok(out)
}
