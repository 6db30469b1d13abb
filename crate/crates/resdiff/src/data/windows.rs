use crate::data::series::SpatioTemporalSeries;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Paired history/target windows with calendar covariates.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    /// [B × M × V × C]
    pub x_co: Tensor,
    /// [B × P × V × C]
    pub x_ta: Tensor,
    /// Per row, time-of-day slot for each of the M+P steps.
    pub tod_index: Vec<Vec<usize>>,
    /// Per row, day-of-week (epoch-day mod 7) for each of the M+P steps.
    pub dow_index: Vec<Vec<usize>>,
    /// Absolute start index of each window in the originating full series.
    pub window_start: Vec<usize>,
}

impl WindowBatch {
    pub fn batch_size(&self) -> usize {
        self.window_start.len()
    }
}

/// Stride-based window enumeration over one series (one split).
#[derive(Debug, Clone)]
pub struct WindowSet {
    pub m: usize,
    pub p: usize,
    /// Local start indices within the series.
    pub starts: Vec<usize>,
}

pub fn window_starts(series: &SpatioTemporalSeries, m: usize, p: usize, stride: usize) -> Result<WindowSet> {
    let t = series.t();
    if m == 0 || p == 0 || stride == 0 {
        return Err(Error::InvalidArgument("m, p, stride must be positive".into()));
    }
    if t < m + p {
        return Err(Error::InvalidArgument(format!(
            "series length {t} shorter than window m+p={}",
            m + p
        )));
    }
    let starts: Vec<usize> = (0..=t - m - p).step_by(stride).collect();
    Ok(WindowSet { m, p, starts })
}

/// Time-of-day slot of an absolute step index of `series`.
pub fn tod_of_step(series: &SpatioTemporalSeries, local_t: usize) -> usize {
    let step_seconds = series.interval_minutes as i64 * 60;
    let epoch = series.start_epoch_seconds + local_t as i64 * step_seconds;
    let spd = series.steps_per_day() as i64;
    (epoch.div_euclid(step_seconds)).rem_euclid(spd) as usize
}

/// Day-of-week as epoch-day modulo 7 (day 0 ≡ 0).
pub fn dow_of_step(series: &SpatioTemporalSeries, local_t: usize) -> usize {
    let step_seconds = series.interval_minutes as i64 * 60;
    let epoch = series.start_epoch_seconds + local_t as i64 * step_seconds;
    epoch.div_euclid(86_400).rem_euclid(7) as usize
}

/// Assemble the batch tensors for the given local window starts.
pub fn assemble_batch(
    series: &SpatioTemporalSeries,
    set: &WindowSet,
    rows: &[usize],
) -> WindowBatch {
    let (m, p) = (set.m, set.p);
    let (v, c) = (series.v(), series.c());
    let b = rows.len();
    let mut x_co = Tensor::zeros(&[b, m, v, c]);
    let mut x_ta = Tensor::zeros(&[b, p, v, c]);
    let mut tod = Vec::with_capacity(b);
    let mut dow = Vec::with_capacity(b);
    let mut window_start = Vec::with_capacity(b);
    let plane = v * c;
    for (bi, &row) in rows.iter().enumerate() {
        let start = set.starts[row];
        let src = series.values.data();
        x_co.data_mut()[bi * m * plane..(bi + 1) * m * plane]
            .copy_from_slice(&src[start * plane..(start + m) * plane]);
        x_ta.data_mut()[bi * p * plane..(bi + 1) * p * plane]
            .copy_from_slice(&src[(start + m) * plane..(start + m + p) * plane]);
        tod.push((0..m + p).map(|i| tod_of_step(series, start + i)).collect());
        dow.push((0..m + p).map(|i| dow_of_step(series, start + i)).collect());
        window_start.push(series.origin_index + start);
    }
    WindowBatch { x_co, x_ta, tod_index: tod, dow_index: dow, window_start }
}

/// All windows of a series as a single batch.
pub fn all_windows(
    series: &SpatioTemporalSeries,
    m: usize,
    p: usize,
    stride: usize,
) -> Result<WindowBatch> {
    let set = window_starts(series, m, p, stride)?;
    let rows: Vec<usize> = (0..set.starts.len()).collect();
    Ok(assemble_batch(series, &set, &rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::series::Layout;

    fn hourly(t: usize) -> SpatioTemporalSeries {
        SpatioTemporalSeries::new(
            Tensor::from_vec(&[t, 1, 1], (0..t).map(|i| i as f64).collect()).unwrap(),
            60,
            0,
            Layout::Graph { v: 1, adjacency: None },
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn window_counts() {
        let s = hourly(24);
        assert_eq!(window_starts(&s, 12, 12, 1).unwrap().starts, vec![0]);
        let s = hourly(26);
        assert_eq!(window_starts(&s, 12, 12, 1).unwrap().starts, vec![0, 1, 2]);
        assert!(window_starts(&hourly(20), 12, 12, 1).is_err());
    }

    #[test]
    fn calendar_arithmetic() {
        let s = hourly(60);
        assert_eq!(tod_of_step(&s, 25), 1);
        assert_eq!(dow_of_step(&s, 25), 1);
        assert_eq!(tod_of_step(&s, 0), 0);
        assert_eq!(dow_of_step(&s, 24 * 7), 0);
    }

    #[test]
    fn contiguity_and_content() {
        let s = hourly(30);
        let b = all_windows(&s, 12, 12, 1).unwrap();
        assert_eq!(b.batch_size(), 7);
        // Target begins exactly one step after history ends.
        for bi in 0..b.batch_size() {
            let last_co = b.x_co.data()[bi * 12 + 11];
            let first_ta = b.x_ta.data()[bi * 12];
            assert_eq!(first_ta, last_co + 1.0);
        }
    }

    #[test]
    fn stride_p_targets_tile_the_series() {
        let s = hourly(48);
        let b = all_windows(&s, 12, 12, 12).unwrap();
        // Window starts 0,12,24: targets cover steps 12..48 exactly once.
        let mut covered = Vec::new();
        for bi in 0..b.batch_size() {
            for i in 0..12 {
                covered.push(b.x_ta.data()[bi * 12 + i]);
            }
        }
        let expected: Vec<f64> = (12..48).map(|i| i as f64).collect();
        assert_eq!(covered, expected);
    }
}
