//! One-dimensional interval clustering into row or column bands.

use crate::geometry::overlap_len;

/// Bands found along one axis and, for every input interval, the
/// consecutive band indices it occupies.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisClusters {
    pub bands: Vec<(f64, f64)>,
    pub assignment: Vec<Vec<usize>>,
}

/// Sweeps intervals by ascending start. An interval joins a band when its
/// overlap with the band's running intersection is at least `overlap_min`
/// of the shorter of the two (the best-fitting band by IoU when several
/// qualify); otherwise it opens a new band. Afterwards every interval is
/// assigned each band it covers to at least `overlap_min` of the band's
/// length, which turns wide intervals into spans.
pub fn cluster_axis(intervals: &[(f64, f64)], overlap_min: f64) -> AxisClusters {
    if intervals.is_empty() {
        return AxisClusters {
            bands: Vec::new(),
            assignment: Vec::new(),
        };
    }
    let mut order: Vec<usize> = (0..intervals.len()).collect();
    order.sort_by(|&a, &b| {
        let (ia, ib) = (intervals[a], intervals[b]);
        ia.0.total_cmp(&ib.0).then(ib.1.total_cmp(&ia.1)).then(a.cmp(&b))
    });

    let mut bands: Vec<(f64, f64)> = Vec::new();
    let mut home = vec![0usize; intervals.len()];
    for i in order {
        let iv = intervals[i];
        let len = iv.1 - iv.0;
        let mut best: Option<(usize, f64)> = None;
        for (b, band) in bands.iter().enumerate() {
            let ov = overlap_len(*band, iv);
            if ov > 0.0 && ov >= overlap_min * len.min(band.1 - band.0) {
                let fit = ov / (band.1.max(iv.1) - band.0.min(iv.0));
                if best.is_none_or(|(_, f)| fit > f) {
                    best = Some((b, fit));
                }
            }
        }
        match best {
            Some((b, _)) => {
                let band = &mut bands[b];
                *band = (band.0.max(iv.0), band.1.min(iv.1));
                home[i] = b;
            }
            None => {
                home[i] = bands.len();
                bands.push(iv);
            }
        }
    }

    let mut sorted: Vec<usize> = (0..bands.len()).collect();
    sorted.sort_by(|&a, &b| {
        bands[a]
            .0
            .total_cmp(&bands[b].0)
            .then(bands[a].1.total_cmp(&bands[b].1))
            .then(a.cmp(&b))
    });
    let mut rank = vec![0usize; bands.len()];
    for (r, &b) in sorted.iter().enumerate() {
        rank[b] = r;
    }
    let bands: Vec<(f64, f64)> = sorted.iter().map(|&b| bands[b]).collect();

    let assignment = intervals
        .iter()
        .enumerate()
        .map(|(i, &iv)| {
            let own = rank[home[i]];
            let (mut lo, mut hi) = (own, own);
            for (b, band) in bands.iter().enumerate() {
                let blen = band.1 - band.0;
                if blen > 0.0 && overlap_len(*band, iv) >= overlap_min * blen {
                    lo = lo.min(b);
                    hi = hi.max(b);
                }
            }
            (lo..=hi).collect()
        })
        .collect();
    AxisClusters { bands, assignment }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton() {
        let c = cluster_axis(&[(0.0, 10.0)], 0.5);
        assert_eq!(c.bands, vec![(0.0, 10.0)]);
        assert_eq!(c.assignment, vec![vec![0]]);
    }

    #[test]
    fn empty() {
        let c = cluster_axis(&[], 0.5);
        assert!(c.bands.is_empty());
    }

    #[test]
    fn two_bands() {
        let c = cluster_axis(&[(0.0, 10.0), (1.0, 9.0), (20.0, 30.0)], 0.5);
        assert_eq!(c.bands.len(), 2);
        assert_eq!(c.assignment, vec![vec![0], vec![0], vec![1]]);
    }

    #[test]
    fn wide_interval_spans() {
        let c = cluster_axis(&[(0.0, 30.0), (0.0, 10.0), (12.0, 30.0)], 0.5);
        assert_eq!(c.bands, vec![(0.0, 10.0), (12.0, 30.0)]);
        assert_eq!(c.assignment, vec![vec![0, 1], vec![0], vec![1]]);
    }

    #[test]
    fn ragged_left_aligned_column() {
        let c = cluster_axis(&[(71.0, 106.0), (73.0, 112.0), (71.0, 81.0), (73.0, 103.0), (122.0, 160.0)], 0.5);
        assert_eq!(c.bands.len(), 2);
        assert_eq!(c.assignment, vec![vec![0], vec![0], vec![0], vec![0], vec![1]]);
    }

    #[test]
    fn span_found_when_narrow_interval_starts_first() {
        // The first-row cell begins one point above the spanning cell.
        let c = cluster_axis(&[(0.0, 8.0), (1.0, 30.0), (20.0, 30.0), (1.0, 9.0)], 0.5);
        assert_eq!(c.bands.len(), 2);
        assert_eq!(c.assignment[1], vec![0, 1]);
        assert_eq!(c.assignment[2], vec![1]);
        assert_eq!(c.assignment[3], vec![0]);
    }
}
