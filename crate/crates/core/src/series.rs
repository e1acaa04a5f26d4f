//! Uniformly sampled series and their CSV / JSON forms.
//!
//! CSV files carry a `t,value` header with `t = i * dt`. JSON files hold
//! `{dt, seed, values}`; numbers are written in shortest round-trip form, so a
//! JSON round trip is bit-exact.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real")]
pub struct TimeSeries<T> {
    pub dt: T,
    #[serde(default)]
    pub seed: Option<u64>,
    pub values: Vec<T>,
}

impl<T: Real> TimeSeries<T> {
    pub fn new(dt: T, values: Vec<T>) -> Result<Self> {
        if !(dt > T::zero() && dt.is_finite()) {
            return Err(invalid(format!("dt must be positive and finite, got {dt}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self { dt, values, seed: None })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn require_len(&self, min: usize) -> Result<()> {
        if self.len() < min {
            Err(Error::TooShort { len: self.len(), min })
        } else {
            Ok(())
        }
    }

    /// Same samples in reverse time order.
    pub fn reversed(&self) -> Self {
        let mut values = self.values.clone();
        values.reverse();
        Self { dt: self.dt, values, seed: self.seed }
    }

    pub fn times(&self) -> impl Iterator<Item = T> + '_ {
        (0..self.len()).map(move |i| T::from_count(i) * self.dt)
    }

    pub fn mean(&self) -> T {
        self.values.iter().fold(T::zero(), |a, &v| a + v) / T::from_count(self.len())
    }

    /// Population variance (divides by `n`).
    pub fn variance(&self) -> T {
        let m = self.mean();
        self.values.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m)) / T::from_count(self.len())
    }

    /// Sample autocorrelation at lag `k` with the usual biased normalization.
    pub fn autocorrelation(&self, k: usize) -> T {
        let n = self.len();
        if k >= n {
            return T::zero();
        }
        let m = self.mean();
        let num = (0..n - k).fold(T::zero(), |a, i| a + (self.values[i] - m) * (self.values[i + k] - m));
        let den = self.values.iter().fold(T::zero(), |a, &v| a + (v - m) * (v - m));
        num / den
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,value")?;
        for (t, v) in self.times().zip(&self.values) {
            writeln!(w, "{t},{v}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(r);
        let headers = reader.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
        let t_col = headers.iter().position(|h| h == "t");
        let v_col = headers
            .iter()
            .position(|h| h == "value")
            .ok_or_else(|| Error::Parse("missing `value` column".into()))?;
        let t_col = t_col.ok_or_else(|| Error::Parse("missing `t` column".into()))?;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            let field = |c: usize| -> Result<T> {
                rec.get(c)
                    .and_then(|s| s.parse::<T>().ok())
                    .ok_or_else(|| Error::Parse(format!("bad number on data line {}", line + 1)))
            };
            times.push(field(t_col)?);
            values.push(field(v_col)?);
        }
        if times.len() < 2 {
            return Err(Error::TooShort { len: times.len(), min: 2 });
        }
        let dt = times[1] - times[0];
        let tol = T::lit(1e-9) * dt.abs().max(T::one());
        for (i, &t) in times.iter().enumerate() {
            if (t - (times[0] + T::from_count(i) * dt)).abs() > tol * T::from_count(i.max(1)) {
                return Err(Error::Parse(format!("non-uniform sampling at row {i}")));
            }
        }
        Self::new(dt, values)
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let s: Self = serde_json::from_reader(r)?;
        let seed = s.seed;
        let mut checked = Self::new(s.dt, s.values)?;
        checked.seed = seed;
        Ok(checked)
    }

    /// Writes CSV or JSON depending on the file extension (`.json`, else CSV).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = BufWriter::new(File::create(path)?);
        if is_json(path) {
            self.write_json(&mut w)?;
        } else {
            self.write_csv(&mut w)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path)?;
        if is_json(path) {
            Self::read_json(f)
        } else {
            Self::read_csv(f)
        }
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

#[cfg(test)]
mod tests {
    type TimeSeries = super::TimeSeries<f64>;

    #[test]
    fn csv_layout() {
        let s = TimeSeries::new(0.5, vec![1.0, -2.25, 3.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "t,value\n0,1\n0.5,-2.25\n1,3\n");
        assert_eq!(TimeSeries::read_csv(&buf[..]).unwrap(), s);
    }

    #[test]
    fn csv_rejects_irregular_grid() {
        let text = "t,value\n0,1\n0.1,2\n0.5,3\n";
        assert!(TimeSeries::read_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn constructor_validates() {
        assert!(TimeSeries::new(0.0, vec![1.0, 2.0]).is_err());
        assert!(TimeSeries::new(1.0, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn json_keeps_seed() {
        let s = TimeSeries::new(0.1, vec![0.1 + 0.2, 1e-300, -7.0 / 3.0]).unwrap().with_seed(11);
        let mut buf = Vec::new();
        s.write_json(&mut buf).unwrap();
        let back = TimeSeries::read_json(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert!(String::from_utf8(buf).unwrap().contains("\"dt\""));
    }
}
