use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Which sensors feed the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    #[default]
    LidarCamera,
    LidarOnly,
    CameraOnly,
}

impl Branch {
    pub fn uses_lidar(self) -> bool {
        self != Branch::CameraOnly
    }

    pub fn uses_camera(self) -> bool {
        self != Branch::LidarOnly
    }

    /// Which of `(l_d, l_rc, l_rd)` this branch may include.
    pub fn allowed(self, has_gt_depth: bool) -> (bool, bool, bool) {
        match self {
            Branch::LidarCamera => (true, true, true),
            Branch::LidarOnly => (false, false, true),
            Branch::CameraOnly => (true, true, has_gt_depth),
        }
    }
}

impl FromStr for Branch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lidar_camera" | "fusion" => Ok(Branch::LidarCamera),
            "lidar_only" | "lidar" => Ok(Branch::LidarOnly),
            "camera_only" | "camera" => Ok(Branch::CameraOnly),
            other => Err(Error::config(format!(
                "unknown branch `{other}` (expected fusion, lidar or camera)"
            ))),
        }
    }
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Branch::LidarCamera => "lidar_camera",
            Branch::LidarOnly => "lidar_only",
            Branch::CameraOnly => "camera_only",
        })
    }
}

/// Loss terms as computed; `None` means the term was not evaluated.
/// `l_rc` and `l_rd` already include their lambda weights.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossComponents {
    pub l_ce: f64,
    pub l_ls: f64,
    pub l_d: Option<f64>,
    pub l_rc: Option<f64>,
    pub l_rd: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_occ: f64,
    pub l_ce: f64,
    pub l_ls: f64,
    pub l_d: f64,
    pub l_rc: f64,
    pub l_rd: f64,
    pub total: f64,
    pub lambda_rc: f64,
    pub lambda_rd: f64,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "l_occ,l_ce,l_ls,l_d,l_rc,l_rd,total";

    pub fn csv_fields(&self) -> String {
        format!(
            "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.l_occ, self.l_ce, self.l_ls, self.l_d, self.l_rc, self.l_rd, self.total
        )
    }

    /// Component-wise sum, used to average over a batch.
    pub fn accumulate(&mut self, other: &LossReport, scale: f64) {
        self.l_occ += scale * other.l_occ;
        self.l_ce += scale * other.l_ce;
        self.l_ls += scale * other.l_ls;
        self.l_d += scale * other.l_d;
        self.l_rc += scale * other.l_rc;
        self.l_rd += scale * other.l_rd;
        self.total += scale * other.total;
        self.lambda_rc = other.lambda_rc;
        self.lambda_rd = other.lambda_rd;
    }
}

/// Sums the terms the branch allows. A provided term the branch forbids is a
/// configuration error; an allowed term left out counts as disabled.
pub fn total_loss(
    components: LossComponents,
    branch: Branch,
    has_gt_depth: bool,
    lambda_rc: f64,
    lambda_rd: f64,
) -> Result<LossReport> {
    let (d_ok, rc_ok, rd_ok) = branch.allowed(has_gt_depth);
    for (name, present, ok) in [
        ("l_d", components.l_d.is_some(), d_ok),
        ("l_rc", components.l_rc.is_some(), rc_ok),
        ("l_rd", components.l_rd.is_some(), rd_ok),
    ] {
        if present && !ok {
            return Err(Error::config(format!(
                "{name} is not part of the {branch} objective{}",
                if branch == Branch::CameraOnly && name == "l_rd" {
                    " without ground-truth depth"
                } else {
                    ""
                }
            )));
        }
    }
    let l_occ = components.l_ce + components.l_ls;
    let l_d = components.l_d.unwrap_or(0.0);
    let l_rc = components.l_rc.unwrap_or(0.0);
    let l_rd = components.l_rd.unwrap_or(0.0);
    for (name, v) in [
        ("l_ce", components.l_ce),
        ("l_ls", components.l_ls),
        ("l_d", l_d),
        ("l_rc", l_rc),
        ("l_rd", l_rd),
    ] {
        if !v.is_finite() || v < 0.0 {
            return Err(Error::Numerical {
                index: 0,
                message: format!("{name} = {v} is not a finite nonnegative loss"),
            });
        }
    }
    Ok(LossReport {
        l_occ,
        l_ce: components.l_ce,
        l_ls: components.l_ls,
        l_d,
        l_rc,
        l_rd,
        total: l_occ + l_d + l_rc + l_rd,
        lambda_rc,
        lambda_rd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_sum() {
        let c = LossComponents {
            l_ce: 0.6,
            l_ls: 0.4,
            l_d: Some(0.5),
            l_rc: Some(0.2),
            l_rd: Some(0.1),
        };
        let r = total_loss(c, Branch::LidarCamera, true, 1.0, 1.0).unwrap();
        assert!((r.total - 1.8).abs() < 1e-12);
        assert_eq!(r.l_occ, 1.0);
    }

    #[test]
    fn branch_rules() {
        let rc = LossComponents {
            l_rc: Some(0.1),
            ..Default::default()
        };
        assert!(matches!(
            total_loss(rc, Branch::LidarOnly, false, 1.0, 1.0),
            Err(Error::Config(_))
        ));
        let rd = LossComponents {
            l_rd: Some(0.1),
            ..Default::default()
        };
        assert!(total_loss(rd, Branch::LidarOnly, false, 1.0, 1.0).is_ok());
        assert!(total_loss(rd, Branch::CameraOnly, false, 1.0, 1.0).is_err());
        assert!(total_loss(rd, Branch::CameraOnly, true, 1.0, 1.0).is_ok());
        assert_eq!(
            total_loss(
                LossComponents::default(),
                Branch::CameraOnly,
                false,
                1.0,
                1.0
            )
            .unwrap()
            .total,
            0.0
        );
    }

    #[test]
    fn parse() {
        assert_eq!("fusion".parse::<Branch>().unwrap(), Branch::LidarCamera);
        assert_eq!("camera_only".parse::<Branch>().unwrap(), Branch::CameraOnly);
        assert!("radar".parse::<Branch>().is_err());
    }
}
