//! LiDAR point clouds and their CSV / binary containers.
//!
//! CSV: header `x,y,z,intensity` (intensity column optional, default 0), one
//! point per line, ego-frame meters.
//!
//! Binary: `"COOCPCLD"`, version u32, count u64, then per point x, y, z,
//! intensity as little-endian f64.

use std::path::Path;

use crate::binio::{read_file, write_file, ByteReader, ByteWriter};
use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub intensity: Vec<f64>,
}

const CLOUD_MAGIC: &[u8; 8] = b"COOCPCLD";
const CLOUD_VERSION: u32 = 1;

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, intensity: Option<Vec<f64>>) -> Result<Self> {
        let intensity = intensity.unwrap_or_else(|| vec![0.0; points.len()]);
        let cloud = Self { points, intensity };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: [f64; 3], intensity: f64) {
        self.points.push(p);
        self.intensity.push(intensity);
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.intensity.len() {
            return Err(Error::dim(
                format!("{} intensities", self.points.len()),
                format!("{}", self.intensity.len()),
            ));
        }
        if let Some(i) = self
            .points
            .iter()
            .position(|p| p.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Numerical {
                index: i,
                message: "point coordinate is not finite".into(),
            });
        }
        if let Some(i) = self.intensity.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Numerical {
                index: i,
                message: format!("intensity {} outside [0, 1]", self.intensity[i]),
            });
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,z,intensity\n");
        for (p, i) in self.points.iter().zip(&self.intensity) {
            s.push_str(&format!("{},{},{},{}\n", p[0], p[1], p[2], i));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr
            .headers()
            .map_err(|e| Error::Format(format!("point csv header: {e}")))?
            .clone();
        let names: Vec<&str> = headers.iter().collect();
        if names.len() < 3 || names[..3] != ["x", "y", "z"] {
            return Err(Error::Format(format!(
                "point csv header must start with x,y,z, got {names:?}"
            )));
        }
        let mut cloud = Self::default();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format(format!("point csv row {}: {e}", line + 1)))?;
            let field = |k: usize| -> Result<f64> {
                rec.get(k)
                    .ok_or_else(|| Error::Format(format!("row {} missing column {k}", line + 1)))?
                    .parse::<f64>()
                    .map_err(|e| Error::Format(format!("row {} column {k}: {e}", line + 1)))
            };
            let p = [field(0)?, field(1)?, field(2)?];
            let i = if names.len() > 3 { field(3)? } else { 0.0 };
            cloud.push(p, i);
        }
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CLOUD_MAGIC);
        w.u32(CLOUD_VERSION);
        w.u64(self.points.len() as u64);
        for (p, &i) in self.points.iter().zip(&self.intensity) {
            w.f64(p[0]);
            w.f64(p[1]);
            w.f64(p[2]);
            w.f64(i);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let version = r.header(CLOUD_MAGIC, "point cloud")?;
        if version != CLOUD_VERSION {
            return Err(Error::Version(format!("point cloud version {version}")));
        }
        let n = r.u64()? as usize;
        let mut cloud = Self::default();
        for _ in 0..n {
            let p = [r.f64()?, r.f64()?, r.f64()?];
            let i = r.f64()?;
            cloud.push(p, i);
        }
        r.finish()?;
        cloud.validate()?;
        Ok(cloud)
    }

    /// Loads `.csv` as CSV and anything else as the binary container.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        if path.extension().is_some_and(|e| e == "csv") {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Format("point csv is not UTF-8".into()))?;
            Self::from_csv(&text)
        } else {
            Self::from_bytes(&bytes)
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if path.extension().is_some_and(|e| e == "csv") {
            write_file(path, self.to_csv().as_bytes())
        } else {
            write_file(path, &self.to_bytes())
        }
    }
}
