//! Overlapping decomposition of an interval, partition-of-unity windows and
//! collocation point classification.

use serde::Serialize;

use crate::error::{FbpinnError, Result};

/// Closed interval `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(FbpinnError::InvalidInterval { a, b });
        }
        Ok(Interval { a, b })
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.a <= x && x <= self.b
    }

    pub(crate) fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(FbpinnError::OutsideDomain {
                x,
                a: self.a,
                b: self.b,
            })
        }
    }
}

/// Ramp geometry of one window.
///
/// The unnormalized window is `ramp((x − rise_start)/δ) · ramp((fall_end − x)/δ)`;
/// a side clipped by the global boundary has no ramp on that side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowParams {
    pub rise_start: Option<f64>,
    pub fall_end: Option<f64>,
    pub ramp_width: f64,
}

/// One overlapping subdomain `Ω_j = [left, right]` (0-based index).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Subdomain {
    pub index: usize,
    pub left: f64,
    pub right: f64,
    /// Unclipped center and width, used for input normalization.
    pub center: f64,
    pub width: f64,
    pub neighbors: Vec<usize>,
    pub window: WindowParams,
}

impl Subdomain {
    pub fn contains(&self, x: f64) -> bool {
        self.left <= x && x <= self.right
    }

    /// Affine map `x ↦ 2(x − c)/w` onto the local network input.
    pub fn normalize(&self, x: f64) -> f64 {
        2.0 * (x - self.center) / self.width
    }

    /// `d x̂ / d x` of [`Subdomain::normalize`].
    pub fn normalize_scale(&self) -> f64 {
        2.0 / self.width
    }

    fn raw_window(&self, x: f64) -> (f64, f64) {
        if !self.contains(x) {
            return (0.0, 0.0);
        }
        let d = self.window.ramp_width;
        let (rise, drise) = match self.window.rise_start {
            Some(s) => {
                let (r, dr) = ramp((x - s) / d);
                (r, dr / d)
            }
            None => (1.0, 0.0),
        };
        let (fall, dfall) = match self.window.fall_end {
            Some(e) => {
                let (r, dr) = ramp((e - x) / d);
                (r, -dr / d)
            }
            None => (1.0, 0.0),
        };
        (rise * fall, drise * fall + rise * dfall)
    }
}

/// C¹ cosine ramp `(1 − cos πt)/2` on `[0, 1]`, clamped outside; returns value and slope.
fn ramp(t: f64) -> (f64, f64) {
    use std::f64::consts::PI;
    if t <= 0.0 {
        (0.0, 0.0)
    } else if t >= 1.0 {
        (1.0, 0.0)
    } else {
        (0.5 * (1.0 - (PI * t).cos()), 0.5 * PI * (PI * t).sin())
    }
}

/// Regularly spaced overlapping subdomains covering an interval.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub domain: Interval,
    pub overlap_fraction: f64,
    pub subdomains: Vec<Subdomain>,
}

/// Builds `n_sub` subdomains with centers `a + (j + ½)h` and common width
/// `w = h / (1 − overlap_fraction)`, clipped to the domain.
pub fn build_decomposition(
    domain: Interval,
    n_sub: usize,
    overlap_fraction: f64,
) -> Result<Decomposition> {
    if n_sub == 0 {
        return Err(FbpinnError::InvalidDecomposition(
            "need at least one subdomain".into(),
        ));
    }
    if !(overlap_fraction > 0.0 && overlap_fraction < 1.0) {
        return Err(FbpinnError::InvalidDecomposition(format!(
            "overlap fraction must lie in (0, 1), got {overlap_fraction}"
        )));
    }
    let h = domain.width() / n_sub as f64;
    let w = h / (1.0 - overlap_fraction);
    // Pairwise chain overlaps ramp across the whole overlap; heavier overlaps
    // give bell-shaped windows rising over each half.
    let ramp_width = (w - h).min(0.5 * w);

    let mut subdomains: Vec<Subdomain> = (0..n_sub)
        .map(|j| {
            let center = domain.a + (j as f64 + 0.5) * h;
            let (lo, hi) = (center - 0.5 * w, center + 0.5 * w);
            let (left, rise_start) = if n_sub == 1 || lo <= domain.a {
                (domain.a, None)
            } else {
                (lo, Some(lo))
            };
            let (right, fall_end) = if n_sub == 1 || hi >= domain.b {
                (domain.b, None)
            } else {
                (hi, Some(hi))
            };
            Subdomain {
                index: j,
                left,
                right,
                center,
                width: w,
                neighbors: Vec::new(),
                window: WindowParams {
                    rise_start,
                    fall_end,
                    ramp_width,
                },
            }
        })
        .collect();
    if n_sub == 1 {
        subdomains[0].center = domain.center();
        subdomains[0].width = domain.width();
    }

    for j in 0..n_sub {
        let (l, r) = (subdomains[j].left, subdomains[j].right);
        subdomains[j].neighbors = (0..n_sub)
            .filter(|&k| k != j && subdomains[k].left <= r && l <= subdomains[k].right)
            .collect();
    }

    Ok(Decomposition {
        domain,
        overlap_fraction,
        subdomains,
    })
}

impl Decomposition {
    pub fn len(&self) -> usize {
        self.subdomains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subdomains.is_empty()
    }

    /// Indices of subdomains whose closed interval contains `x`, ascending.
    pub fn containing(&self, x: f64) -> impl Iterator<Item = usize> + '_ {
        self.subdomains
            .iter()
            .filter(move |s| s.contains(x))
            .map(|s| s.index)
    }

    /// Normalized window `ω_j(x)` and its derivative.
    pub fn window(&self, j: usize, x: f64) -> (f64, f64) {
        let (wj, dwj) = self.subdomains[j].raw_window(x);
        if wj == 0.0 && dwj == 0.0 {
            return (0.0, 0.0);
        }
        let (mut sum, mut dsum) = (0.0, 0.0);
        for s in &self.subdomains {
            let (w, dw) = s.raw_window(x);
            sum += w;
            dsum += dw;
        }
        (wj / sum, (dwj * sum - wj * dsum) / (sum * sum))
    }

    /// Windows of every subdomain containing `x`, as `(j, ω_j, ω_j′)`.
    pub fn windows_at(&self, x: f64) -> Vec<(usize, f64, f64)> {
        let raw: Vec<(usize, f64, f64)> = self
            .subdomains
            .iter()
            .filter(|s| s.contains(x))
            .map(|s| {
                let (w, dw) = s.raw_window(x);
                (s.index, w, dw)
            })
            .collect();
        let sum: f64 = raw.iter().map(|r| r.1).sum();
        let dsum: f64 = raw.iter().map(|r| r.2).sum();
        raw.into_iter()
            .map(|(j, w, dw)| (j, w / sum, (dw * sum - w * dsum) / (sum * sum)))
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("decomposition serializes")
    }
}

/// `n` equispaced points on `[a, b]` including both endpoints.
pub fn sample_collocation(domain: Interval, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(FbpinnError::InvalidDecomposition(format!(
            "need at least 2 collocation points, got {n}"
        )));
    }
    let step = domain.width() / (n - 1) as f64;
    Ok((0..n)
        .map(|i| {
            if i == n - 1 {
                domain.b
            } else {
                domain.a + i as f64 * step
            }
        })
        .collect())
}

/// Collocation points and their per-subdomain interior/overlap index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct CollocationSets {
    pub points: Vec<f64>,
    /// `X_j`: indices into `points`, ascending.
    pub members: Vec<Vec<usize>>,
    /// `X_j^int`: points of `Ω_j` contained in no other subdomain.
    pub interior: Vec<Vec<usize>>,
    /// `X_j^∘`: points of `Ω_j` shared with a neighbor.
    pub overlap: Vec<Vec<usize>>,
    /// Containing subdomains of each point, ascending.
    pub owners: Vec<Vec<usize>>,
}

impl CollocationSets {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// True if point `i` lies in more than one subdomain.
    pub fn is_overlap(&self, i: usize) -> bool {
        self.owners[i].len() > 1
    }
}

pub fn classify_points(decomp: &Decomposition, points: &[f64]) -> Result<CollocationSets> {
    let n_sub = decomp.len();
    let mut members = vec![Vec::new(); n_sub];
    let mut interior = vec![Vec::new(); n_sub];
    let mut overlap = vec![Vec::new(); n_sub];
    let mut owners = Vec::with_capacity(points.len());
    for (i, &x) in points.iter().enumerate() {
        decomp.domain.check(x)?;
        let own: Vec<usize> = decomp.containing(x).collect();
        if own.is_empty() {
            return Err(FbpinnError::InvalidDecomposition(format!(
                "point {x} is not covered by any subdomain"
            )));
        }
        for &j in &own {
            members[j].push(i);
            if own.len() == 1 {
                interior[j].push(i);
            } else {
                overlap[j].push(i);
            }
        }
        owners.push(own);
    }
    Ok(CollocationSets {
        points: points.to_vec(),
        members,
        interior,
        overlap,
        owners,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn unit() -> Interval {
        Interval::new(0.0, 1.0).unwrap()
    }

    #[test]
    fn rejects_bad_interval() {
        assert!(Interval::new(1.0, 1.0).is_err());
        assert!(Interval::new(0.0, f64::NAN).is_err());
    }

    #[test]
    fn single_subdomain_covers_domain() {
        let d = build_decomposition(unit(), 1, 0.3).unwrap();
        assert_eq!(d.subdomains[0].left, 0.0);
        assert_eq!(d.subdomains[0].right, 1.0);
        assert!(d.subdomains[0].neighbors.is_empty());
        for x in [0.0, 0.37, 1.0] {
            assert_eq!(d.window(0, x), (1.0, 0.0));
        }
    }

    #[test]
    fn eight_on_zero_eight_half_overlap() {
        let d = build_decomposition(Interval::new(0.0, 8.0).unwrap(), 8, 0.5).unwrap();
        let s0 = &d.subdomains[0];
        let s1 = &d.subdomains[1];
        assert_eq!((s0.left, s0.right), (0.0, 1.5));
        assert_eq!((s1.left, s1.right), (0.5, 2.5));
        assert_eq!(s1.width, 2.0);
        assert!((s0.right - s1.left - 1.0).abs() < 1e-15);
    }

    #[test]
    fn chain_decomposition_has_two_neighbors() {
        // Pairwise overlaps whenever w ≤ 2h, i.e. fraction ≤ 0.5.
        let d = build_decomposition(Interval::new(-2.0 * PI, 2.0 * PI).unwrap(), 16, 0.4).unwrap();
        for s in &d.subdomains[1..15] {
            assert_eq!(s.neighbors, vec![s.index - 1, s.index + 1]);
        }
        assert_eq!(d.subdomains[0].neighbors, vec![1]);
    }

    #[test]
    fn seventy_percent_overlap_neighbors() {
        // w = h/0.3 ≈ 3.33h: subdomains up to three centers away overlap.
        let d = build_decomposition(Interval::new(-2.0 * PI, 2.0 * PI).unwrap(), 16, 0.7).unwrap();
        for s in &d.subdomains[3..13] {
            let expect: Vec<usize> = (s.index - 3..=s.index + 3).filter(|&k| k != s.index).collect();
            assert_eq!(s.neighbors, expect);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_decomposition(unit(), 0, 0.5).is_err());
        assert!(build_decomposition(unit(), 4, 0.0).is_err());
        assert!(build_decomposition(unit(), 4, 1.0).is_err());
    }

    #[test]
    fn symmetric_overlap_midpoint() {
        let d = build_decomposition(Interval::new(0.0, 2.0).unwrap(), 2, 0.2).unwrap();
        let (w0, _) = d.window(0, 1.0);
        let (w1, _) = d.window(1, 1.0);
        assert!((w0 - 0.5).abs() < 1e-15 && (w1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn window_zero_outside_support() {
        let d = build_decomposition(Interval::new(0.0, 4.0).unwrap(), 4, 0.5).unwrap();
        let s = &d.subdomains[2];
        assert_eq!(d.window(2, s.left - 1e-9), (0.0, 0.0));
        assert_eq!(d.window(2, s.left).0, 0.0);
        assert_eq!(d.window(2, 0.0), (0.0, 0.0));
    }

    #[test]
    fn sample_points() {
        assert_eq!(sample_collocation(unit(), 3).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(sample_collocation(unit(), 2).unwrap(), vec![0.0, 1.0]);
        assert!(sample_collocation(unit(), 1).is_err());
        let dom = Interval::new(-2.0 * PI, 2.0 * PI).unwrap();
        let pts = sample_collocation(dom, 3000).unwrap();
        assert_eq!(pts.len(), 3000);
        assert!((pts[1] - pts[0] - 4.0 * PI / 2999.0).abs() < 1e-14);
        assert_eq!(*pts.last().unwrap(), 2.0 * PI);
    }

    #[test]
    fn single_subdomain_classification() {
        let d = build_decomposition(unit(), 1, 0.5).unwrap();
        let pts = sample_collocation(unit(), 11).unwrap();
        let c = classify_points(&d, &pts).unwrap();
        assert_eq!(c.interior[0].len(), 11);
        assert!(c.overlap[0].is_empty());
    }

    #[test]
    fn shared_point_in_both_overlaps() {
        // h = 1, w = 1.4 gives the overlap [0.8, 1.2].
        let d = build_decomposition(Interval::new(0.0, 2.0).unwrap(), 2, 1.0 - 1.0 / 1.4).unwrap();
        assert!((d.subdomains[0].right - 1.2).abs() < 1e-12);
        assert!((d.subdomains[1].left - 0.8).abs() < 1e-12);
        let c = classify_points(&d, &[0.1, 1.0, 1.9]).unwrap();
        assert_eq!(c.overlap[0], vec![1]);
        assert_eq!(c.overlap[1], vec![1]);
        assert_eq!(c.interior[0], vec![0]);
        assert_eq!(c.interior[1], vec![2]);
    }

    #[test]
    fn point_outside_rejected() {
        let d = build_decomposition(unit(), 2, 0.5).unwrap();
        let err = classify_points(&d, &[0.5, 1.5]).unwrap_err();
        assert_eq!(err, FbpinnError::OutsideDomain { x: 1.5, a: 0.0, b: 1.0 });
    }

    #[test]
    fn json_export_lists_subdomains() {
        let d = build_decomposition(unit(), 3, 0.5).unwrap();
        let v = d.to_json();
        assert_eq!(v["subdomains"].as_array().unwrap().len(), 3);
        assert!(v["subdomains"][1]["window"]["ramp_width"].is_number());
    }
}
