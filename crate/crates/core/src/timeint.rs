//! Fixed-step classical RK4 over composite states.

use nalgebra::DMatrix;

use crate::error::{DboError, Result};

/// One named state block.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub data: DMatrix<f64>,
}

/// Ordered collection of named blocks with blockwise arithmetic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CompositeState {
    blocks: Vec<Block>,
}

impl CompositeState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: impl Into<String>, data: DMatrix<f64>) -> Self {
        self.push(name, data);
        self
    }

    pub fn push(&mut self, name: impl Into<String>, data: DMatrix<f64>) {
        self.blocks.push(Block { name: name.into(), data });
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.blocks.iter().find(|b| b.name == name).map(|b| &b.data)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut DMatrix<f64>> {
        self.blocks.iter_mut().find(|b| b.name == name).map(|b| &mut b.data)
    }

    /// Block by name, or a dimension error naming it.
    pub fn require(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.get(name).ok_or_else(|| DboError::Dimension(format!("composite state has no block '{name}'")))
    }

    pub fn set(&mut self, name: &str, data: DMatrix<f64>) -> Result<()> {
        let slot = self
            .get_mut(name)
            .ok_or_else(|| DboError::Dimension(format!("composite state has no block '{name}'")))?;
        if slot.shape() != data.shape() {
            return Err(DboError::Dimension(format!("block '{name}' changed shape")));
        }
        *slot = data;
        Ok(())
    }

    fn check_layout(&self, other: &CompositeState) -> Result<()> {
        if self.blocks.len() != other.blocks.len() {
            return Err(DboError::Dimension("composite states have different block counts".into()));
        }
        for (a, b) in self.blocks.iter().zip(&other.blocks) {
            if a.name != b.name || a.data.shape() != b.data.shape() {
                return Err(DboError::Dimension(format!(
                    "block '{}' {:?} does not match '{}' {:?}",
                    a.name,
                    a.data.shape(),
                    b.name,
                    b.data.shape()
                )));
            }
        }
        Ok(())
    }

    /// `self + a · other`.
    pub fn add_scaled(&self, a: f64, other: &CompositeState) -> Result<CompositeState> {
        self.check_layout(other)?;
        let blocks = self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(x, k)| Block { name: x.name.clone(), data: &x.data + &k.data * a })
            .collect();
        Ok(CompositeState { blocks })
    }

    /// Name of the first block holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.blocks
            .iter()
            .find(|b| b.data.iter().any(|v| !v.is_finite()))
            .map(|b| b.name.as_str())
    }
}

/// One classical RK4 step from `(t, s)`.
pub fn rk4_step<F>(s: &CompositeState, t: f64, dt: f64, rhs: &mut F) -> Result<CompositeState>
where
    F: FnMut(f64, &CompositeState) -> Result<CompositeState>,
{
    if !(dt > 0.0) {
        return Err(DboError::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let check = |k: &CompositeState, stage: usize| -> Result<()> {
        match k.first_non_finite() {
            Some(name) => Err(DboError::NonFinite(format!("RK4 stage {stage} block '{name}' at t = {t}"))),
            None => Ok(()),
        }
    };
    let half = 0.5 * dt;
    let k1 = rhs(t, s)?;
    check(&k1, 1)?;
    let k2 = rhs(t + half, &s.add_scaled(half, &k1)?)?;
    check(&k2, 2)?;
    let k3 = rhs(t + half, &s.add_scaled(half, &k2)?)?;
    check(&k3, 3)?;
    let k4 = rhs(t + dt, &s.add_scaled(dt, &k3)?)?;
    check(&k4, 4)?;
    let sixth = dt / 6.0;
    let next = s
        .add_scaled(sixth, &k1)?
        .add_scaled(2.0 * sixth, &k2)?
        .add_scaled(2.0 * sixth, &k3)?
        .add_scaled(sixth, &k4)?;
    if let Some(name) = next.first_non_finite() {
        return Err(DboError::NonFinite(format!("RK4 update of block '{name}' at t = {}", t + dt)));
    }
    Ok(next)
}

/// Number of fixed steps covering `[t0, t_final]`.
pub fn step_count(t0: f64, t_final: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) {
        return Err(DboError::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let span = t_final - t0;
    if span < 0.0 {
        return Err(DboError::InvalidArgument(format!("final time {t_final} precedes start {t0}")));
    }
    let n = (span / dt).round();
    if (n * dt - span).abs() > 1e-9 * span.abs().max(1.0) {
        return Err(DboError::InvalidArgument(format!(
            "(t_final - t0) / dt = {} is not an integer",
            span / dt
        )));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone)]
pub struct IntegrationOutcome {
    pub state: CompositeState,
    pub t: f64,
    pub steps: usize,
}

/// Fixed-step march from `t0` to `t_final`.
///
/// `post_step` runs after every accepted step (never between stages);
/// `observer` runs at step 0 and every `stride` steps. Times are `t0 + k·dt`.
pub fn integrate<F, H, O>(
    s0: CompositeState,
    t0: f64,
    dt: f64,
    t_final: f64,
    stride: usize,
    mut rhs: F,
    mut post_step: H,
    mut observer: O,
) -> Result<IntegrationOutcome>
where
    F: FnMut(f64, &CompositeState) -> Result<CompositeState>,
    H: FnMut(f64, &mut CompositeState) -> Result<()>,
    O: FnMut(usize, f64, &CompositeState) -> Result<()>,
{
    let steps = step_count(t0, t_final, dt)?;
    let stride = stride.max(1);
    let observe = |obs: &mut O, k: usize, t: f64, s: &CompositeState| -> Result<()> {
        obs(k, t, s).map_err(|e| match e {
            e @ DboError::Observer { .. } => e,
            other => DboError::Observer { t, msg: other.to_string() },
        })
    };
    let mut state = s0;
    observe(&mut observer, 0, t0, &state)?;
    for k in 0..steps {
        let t = t0 + k as f64 * dt;
        state = rk4_step(&state, t, dt, &mut rhs)?;
        let t_next = t0 + (k + 1) as f64 * dt;
        post_step(t_next, &mut state)?;
        if (k + 1) % stride == 0 {
            observe(&mut observer, k + 1, t_next, &state)?;
        }
    }
    Ok(IntegrationOutcome { state, t: t0 + steps as f64 * dt, steps })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> CompositeState {
        CompositeState::new().with("y", DMatrix::from_element(1, 1, v))
    }

    #[test]
    fn rk4_decay_step() {
        let mut rhs = |_: f64, s: &CompositeState| Ok(CompositeState::new().with("y", -s.require("y")?.clone()));
        let next = rk4_step(&scalar(1.0), 0.0, 0.1, &mut rhs).unwrap();
        let h: f64 = -0.1;
        let poly = 1.0 + h + h * h / 2.0 + h.powi(3) / 6.0 + h.powi(4) / 24.0;
        let y = next.require("y").unwrap()[(0, 0)];
        assert!((y - poly).abs() < 1e-16);
        assert!((y - 0.9048375).abs() < 1e-7);
    }

    #[test]
    fn zero_rhs_is_bit_identical() {
        let s0 = CompositeState::new()
            .with("a", DMatrix::from_fn(3, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 0.7)))
            .with("b", DMatrix::from_element(1, 1, std::f64::consts::PI));
        let zero = s0.add_scaled(-1.0, &s0).unwrap();
        let out = integrate(
            s0.clone(),
            0.0,
            0.01,
            1.0,
            10,
            |_, _| Ok(zero.clone()),
            |_, _| Ok(()),
            |_, _, _| Ok(()),
        )
        .unwrap();
        assert_eq!(out.steps, 100);
        assert_eq!(out.state, s0);
    }

    #[test]
    fn observer_stride_row_count() {
        let mut rows = 0;
        integrate(
            scalar(1.0),
            0.0,
            1.0 / 256.0,
            4.0,
            16,
            |_, s| Ok(s.add_scaled(-1.0, s).unwrap()),
            |_, _| Ok(()),
            |_, _, _| {
                rows += 1;
                Ok(())
            },
        )
        .unwrap();
        assert_eq!(rows, 65);
    }

    #[test]
    fn observer_failure_carries_time() {
        let err = integrate(
            scalar(1.0),
            0.0,
            0.25,
            1.0,
            1,
            |_, s| Ok(s.clone()),
            |_, _| Ok(()),
            |k, _, _| if k == 2 { Err(DboError::InvalidArgument("disk full".into())) } else { Ok(()) },
        )
        .unwrap_err();
        match err {
            DboError::Observer { t, msg } => {
                assert_eq!(t, 0.5);
                assert!(msg.contains("disk full"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn non_finite_stage_aborts() {
        let mut rhs = |t: f64, s: &CompositeState| {
            let v = if t > 0.0 { f64::NAN } else { 1.0 };
            Ok(CompositeState::new().with("y", s.require("y")?.map(|_| v)))
        };
        let err = rk4_step(&scalar(1.0), 0.0, 0.1, &mut rhs).unwrap_err();
        assert!(err.to_string().contains("stage 2"), "{err}");
    }

    #[test]
    fn step_count_validation() {
        assert_eq!(step_count(0.0, 4.0, 1.0 / 256.0).unwrap(), 1024);
        assert_eq!(step_count(2.0, 2.0, 0.1).unwrap(), 0);
        assert!(step_count(0.0, 1.0, 0.3).is_err());
        assert!(step_count(1.0, 0.0, 0.1).is_err());
        assert!(step_count(0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn layout_mismatch_is_rejected() {
        let a = scalar(1.0);
        let b = CompositeState::new().with("z", DMatrix::from_element(1, 1, 1.0));
        assert!(a.add_scaled(1.0, &b).is_err());
    }

    #[test]
    fn fourth_order_on_linear_oscillator() {
        // y'' = -y written as a 2-vector; exact solution (cos t, -sin t)
        let run = |dt: f64| {
            let s0 = CompositeState::new().with("q", DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
            let out = integrate(
                s0,
                0.0,
                dt,
                1.0,
                1,
                |_, s| {
                    let q = s.require("q")?;
                    Ok(CompositeState::new().with("q", DMatrix::from_column_slice(2, 1, &[q[1], -q[0]])))
                },
                |_, _| Ok(()),
                |_, _, _| Ok(()),
            )
            .unwrap();
            let q = out.state.require("q").unwrap().clone();
            ((q[0] - 1f64.cos()).powi(2) + (q[1] + 1f64.sin()).powi(2)).sqrt()
        };
        let order = (run(0.1) / run(0.05)).log2();
        assert!((order - 4.0).abs() < 0.1, "{order}");
    }
}
