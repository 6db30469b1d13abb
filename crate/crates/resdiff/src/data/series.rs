use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Spatial arrangement of the units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Layout {
    /// Regular grid of H × W cells, unit index row-major.
    Grid { h: usize, w: usize },
    /// Graph of `v` nodes with optional (src, dst) adjacency edges.
    Graph {
        v: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        adjacency: Option<Vec<(usize, usize)>>,
    },
}

impl Layout {
    pub fn units(&self) -> usize {
        match self {
            Layout::Grid { h, w } => h * w,
            Layout::Graph { v, .. } => *v,
        }
    }
}

/// Full dataset tensor [T × V × C] with timestamp metadata.
#[derive(Debug, Clone)]
pub struct SpatioTemporalSeries {
    pub values: Tensor,
    pub interval_minutes: u32,
    pub start_epoch_seconds: i64,
    pub layout: Layout,
    pub channel_names: Vec<String>,
    /// Absolute time index of the first step within the originating series.
    /// Zero for loaded data; set by `split`.
    pub origin_index: usize,
}

impl SpatioTemporalSeries {
    pub fn new(
        values: Tensor,
        interval_minutes: u32,
        start_epoch_seconds: i64,
        layout: Layout,
        channel_names: Vec<String>,
    ) -> Result<SpatioTemporalSeries> {
        let s = SpatioTemporalSeries {
            values,
            interval_minutes,
            start_epoch_seconds,
            layout,
            channel_names,
            origin_index: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let shape = self.values.shape();
        if shape.len() != 3 {
            return Err(Error::Data(format!("series tensor must be [T,V,C], got {shape:?}")));
        }
        if self.layout.units() != shape[1] {
            return Err(Error::Data(format!(
                "layout implies {} units, tensor has {}",
                self.layout.units(),
                shape[1]
            )));
        }
        if self.interval_minutes == 0 {
            return Err(Error::Data("interval_minutes must be positive".into()));
        }
        if let Some(pos) = self.values.data().iter().position(|v| !v.is_finite()) {
            let (v, c) = (shape[1], shape[2]);
            return Err(Error::Data(format!(
                "non-finite value at (t={}, v={}, c={})",
                pos / (v * c),
                (pos / c) % v,
                pos % c
            )));
        }
        Ok(())
    }

    pub fn t(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn v(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn c(&self) -> usize {
        self.values.shape()[2]
    }

    /// Number of sampling steps per day; the interval must divide a day.
    pub fn steps_per_day(&self) -> usize {
        (24 * 60 / self.interval_minutes) as usize
    }

    /// Copy of the closed-open time range [lo, hi).
    pub fn slice_time(&self, lo: usize, hi: usize) -> SpatioTemporalSeries {
        assert!(lo <= hi && hi <= self.t());
        let (v, c) = (self.v(), self.c());
        let data = self.values.data()[lo * v * c..hi * v * c].to_vec();
        let step_seconds = self.interval_minutes as i64 * 60;
        SpatioTemporalSeries {
            values: Tensor::from_vec(&[hi - lo, v, c], data).expect("slice shape"),
            interval_minutes: self.interval_minutes,
            start_epoch_seconds: self.start_epoch_seconds + lo as i64 * step_seconds,
            layout: self.layout.clone(),
            channel_names: self.channel_names.clone(),
            origin_index: self.origin_index + lo,
        }
    }
}

/// Chronological split. Train and validation lengths round down,
/// the remainder goes to test.
pub fn split(
    series: &SpatioTemporalSeries,
    ratios: (u32, u32, u32),
) -> Result<(SpatioTemporalSeries, SpatioTemporalSeries, SpatioTemporalSeries)> {
    let t = series.t();
    let total = (ratios.0 + ratios.1 + ratios.2) as usize;
    if total == 0 {
        return Err(Error::InvalidArgument("split ratios sum to zero".into()));
    }
    let n_train = t * ratios.0 as usize / total;
    let n_val = t * ratios.1 as usize / total;
    if n_train == 0 || n_val == 0 || n_train + n_val >= t {
        return Err(Error::InvalidArgument(format!(
            "series too short (T={t}) for ratios {ratios:?}"
        )));
    }
    Ok((
        series.slice_time(0, n_train),
        series.slice_time(n_train, n_train + n_val),
        series.slice_time(n_train + n_val, t),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(t: usize) -> SpatioTemporalSeries {
        SpatioTemporalSeries::new(
            Tensor::from_vec(&[t, 2, 1], (0..t * 2).map(|i| i as f64).collect()).unwrap(),
            30,
            0,
            Layout::Grid { h: 1, w: 2 },
            vec!["flow".into()],
        )
        .unwrap()
    }

    #[test]
    fn split_ratio_cases() {
        let (tr, va, te) = split(&series(100), (6, 2, 2)).unwrap();
        assert_eq!((tr.t(), va.t(), te.t()), (60, 20, 20));

        let (tr, va, te) = split(&series(10), (6, 2, 2)).unwrap();
        assert_eq!((tr.t(), va.t(), te.t()), (6, 2, 2));

        // Remainder is assigned to test.
        let (tr, va, te) = split(&series(11), (6, 2, 2)).unwrap();
        assert_eq!((tr.t(), va.t(), te.t()), (6, 2, 3));
    }

    #[test]
    fn split_keeps_calendar_and_origin() {
        let (_, va, te) = split(&series(100), (6, 2, 2)).unwrap();
        assert_eq!(va.start_epoch_seconds, 60 * 30 * 60);
        assert_eq!(va.origin_index, 60);
        assert_eq!(te.origin_index, 80);
    }

    #[test]
    fn split_rejects_too_short() {
        assert!(split(&series(4), (6, 2, 2)).is_err());
    }

    #[test]
    fn rejects_nan_with_location() {
        let mut vals = vec![0.0; 12];
        vals[7] = f64::NAN; // t=3, v=1, c=0 for [6,2,1]
        let r = SpatioTemporalSeries::new(
            Tensor::from_vec(&[6, 2, 1], vals).unwrap(),
            30,
            0,
            Layout::Graph { v: 2, adjacency: None },
            vec![],
        );
        let msg = format!("{}", r.unwrap_err());
        assert!(msg.contains("t=3") && msg.contains("v=1"), "{msg}");
    }
}
