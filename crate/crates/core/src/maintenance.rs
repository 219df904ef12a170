//! Path maintenance on the implicit low-rank representation.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::exact_ds::ExactDs;
use crate::ipm::{AdvanceInfo, IpmParams, Mode, PathMaintainer};
use crate::model::QpInstance;
use crate::sketch::ApproxDs;

/// Steps between forced restarts: `max(1, ⌈√(n / (k + m))⌉)`.
pub fn restart_period(n: usize, k: usize, m: usize) -> usize {
    ((n as f64 / (k + m).max(1) as f64).sqrt().ceil() as usize).max(1)
}

pub struct LowRankMaintainer<'a> {
    inst: &'a QpInstance,
    exact: ExactDs,
    approx: ApproxDs,
    t: f64,
    q: usize,
    seed: u64,
    delta: f64,
    refreshes: usize,
    restarts: usize,
}

impl<'a> LowRankMaintainer<'a> {
    pub fn new(
        inst: &'a QpInstance,
        x: DVector<f64>,
        s: DVector<f64>,
        t: f64,
        params: &IpmParams,
        seed: u64,
        delta: f64,
    ) -> Result<Self> {
        let k = inst.objective().rank().ok_or_else(|| {
            Error::InvalidParameter("the low-rank backend needs a factored objective".into())
        })?;
        let q = restart_period(inst.n(), k, inst.m());
        let exact = ExactDs::initialize(inst, &x, &s, &x, &s, t, params.lambda, params.alpha)?;
        let approx = ApproxDs::new(&exact, params.eps_bar, params.eps_bar * t, q, delta, seed)?;
        Ok(Self { inst, exact, approx, t, q, seed, delta, refreshes: 0, restarts: 0 })
    }

    pub fn restarts(&self) -> usize {
        self.restarts
    }

    pub fn exact_ds(&self) -> &ExactDs {
        &self.exact
    }

    fn restart(&mut self, params: &IpmParams) -> Result<()> {
        let (x, s) = self.exact.output();
        let y = self.exact.y().clone();
        self.exact = ExactDs::initialize(self.inst, &x, &s, &x, &s, self.t, params.lambda, params.alpha)?;
        self.exact.set_y(y);
        self.restarts += 1;
        self.approx = ApproxDs::new(
            &self.exact,
            params.eps_bar,
            params.eps_bar * self.t,
            self.q,
            self.delta,
            self.seed.wrapping_add(self.restarts as u64),
        )?;
        Ok(())
    }
}

impl PathMaintainer for LowRankMaintainer<'_> {
    fn advance(&mut self, params: &IpmParams) -> Result<AdvanceInfo> {
        let hw = self.exact.weighted_hess().clone();
        let dmu = self.exact.delta_mu();
        let (x0, s0) = self.exact.output();
        let saved = (self.exact.coefficients().clone(), self.exact.y().clone());
        self.exact.move_step()?;
        let (mut x1, mut s1) = self.exact.output();
        let mut scale = 1.0f64;
        for (i, blk) in self.inst.blocks().iter().enumerate() {
            scale = scale.min(blk.max_step(x0[i], x1[i] - x0[i], 0.9));
        }
        if scale < 1.0 {
            if params.mode == Mode::Theory {
                return Err(Error::InvariantViolation("step leaves the domain".into()));
            }
            self.exact.restore(saved.0, saved.1);
            self.exact.move_scaled(scale)?;
            (x1, s1) = self.exact.output();
        }
        let refresh = self.approx.move_and_query(&self.exact)?;
        self.refreshes += refresh.len();
        let deltas = self.exact.update(&refresh)?;
        self.approx.update(&self.exact, &deltas);
        let dx = x1 - x0;
        let ds = s1 - s0;
        let norm = |v: &DVector<f64>, p: f64| v.iter().zip(hw.iter()).map(|(a, h)| a * a * h.powf(p)).sum::<f64>().sqrt();
        Ok(AdvanceInfo { delta_mu_norm: norm(&dmu, -1.0), dx_norm: norm(&dx, 1.0), ds_norm: norm(&ds, -1.0), scale })
    }

    fn retarget(&mut self, t: f64, params: &IpmParams) -> Result<()> {
        self.t = t;
        let tb = self.exact.t_bar();
        if self.approx.timestamp() >= self.q || (tb - t).abs() > params.eps_t * tb {
            self.restart(params)?;
        }
        Ok(())
    }

    fn exact(&mut self) -> Result<(DVector<f64>, DVector<f64>, DVector<f64>)> {
        let (x, s) = self.exact.output();
        Ok((x, s, self.exact.y().clone()))
    }

    fn refreshes(&self) -> usize {
        self.refreshes
    }
}
