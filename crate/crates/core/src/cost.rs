//! Multiply-accumulate counts for the five stages of the learnable extractor.
//!
//! | stage | cost |
//! |---|---|
//! | P1 position keys | `2 H W C_E C_g` |
//! | P2 box queries | `N C_E (K C_g + 4 C_E)` |
//! | P3 geometric logits | `N K |Ω| C_g` |
//! | P4 appearance logits | `H W K C_f` |
//! | P5 aggregation | `N K |Ω| C_f` |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::SamplingPlan;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostConfig {
    pub n: u64,
    pub k: u64,
    pub c_e: u64,
    pub c_g: u64,
    pub c_f: u64,
    pub h: u64,
    pub w: u64,
    /// Average number of sampled positions per RoI.
    pub omega: u64,
}

impl CostConfig {
    /// N=300, K=49, C_E=512, C_g=256, C_f=256 with the given map and support size.
    pub fn typical(h: u64, w: u64, omega: u64) -> Self {
        Self {
            n: 300,
            k: 49,
            c_e: 512,
            c_g: 256,
            c_f: 256,
            h,
            w,
            omega,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("n", self.n),
            ("k", self.k),
            ("c_e", self.c_e),
            ("c_g", self.c_g),
            ("c_f", self.c_f),
            ("h", self.h),
            ("w", self.w),
            ("omega", self.omega),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub p1: u128,
    pub p2: u128,
    pub p3: u128,
    pub p4: u128,
    pub p5: u128,
    pub total: u128,
}

pub fn flops(cfg: &CostConfig) -> Result<CostBreakdown> {
    cfg.validate()?;
    let [n, k, c_e, c_g, c_f, h, w, omega] = [
        cfg.n, cfg.k, cfg.c_e, cfg.c_g, cfg.c_f, cfg.h, cfg.w, cfg.omega,
    ]
    .map(u128::from);
    let p1 = 2 * h * w * c_e * c_g;
    let p2 = n * c_e * (k * c_g + 4 * c_e);
    let p3 = n * k * omega * c_g;
    let p4 = h * w * k * c_f;
    let p5 = n * k * omega * c_f;
    Ok(CostBreakdown {
        p1,
        p2,
        p3,
        p4,
        p5,
        total: p1 + p2 + p3 + p4 + p5,
    })
}

/// Sample statistics over a set of plans and the cost they imply.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasuredCost {
    pub mean_in: f64,
    pub mean_out: f64,
    pub mean_total: f64,
    /// Cost with `omega` set to `mean_total` rounded to the nearest integer
    /// (at least 1); `n` is the number of plans.
    pub breakdown: CostBreakdown,
}

pub fn measured_flops(plans: &[SamplingPlan], base: &CostConfig) -> Result<MeasuredCost> {
    if plans.is_empty() {
        return Err(Error::invalid("no sampling plans given"));
    }
    let count = plans.len() as f64;
    let total_in: usize = plans.iter().map(|p| p.in_positions().len()).sum();
    let total_out: usize = plans.iter().map(|p| p.out_positions().len()).sum();
    let mean_in = total_in as f64 / count;
    let mean_out = total_out as f64 / count;
    let mean_total = mean_in + mean_out;
    let cfg = CostConfig {
        n: plans.len() as u64,
        omega: (mean_total.round() as u64).max(1),
        ..*base
    };
    Ok(MeasuredCost {
        mean_in,
        mean_out,
        mean_total,
        breakdown: flops(&cfg)?,
    })
}
