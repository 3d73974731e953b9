//! Volatility uncertainty sets and the vertex optimization behind every
//! Hamiltonian in the crate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Direction of the nonlinear expectation.
///
/// `Inf` is the superlinear expectation (infimum over priors, the bid side);
/// `Sup` is the sublinear one (supremum over priors, the offer side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[serde(alias = "super", alias = "bid", alias = "lower")]
    Inf,
    #[serde(alias = "sub", alias = "offer", alias = "upper")]
    Sup,
}

impl Mode {
    pub fn flip(self) -> Mode {
        match self {
            Mode::Inf => Mode::Sup,
            Mode::Sup => Mode::Inf,
        }
    }

    /// True when `candidate` strictly improves on `incumbent`.
    #[inline]
    pub fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Mode::Inf => candidate < incumbent,
            Mode::Sup => candidate > incumbent,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Inf => "inf",
            Mode::Sup => "sup",
        }
    }
}

/// Closed interval of variance rates `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 2]", into = "[f64; 2]")]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn new(lo: f64, hi: f64) -> Result<Band> {
        if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
            return Err(Error::InvalidBand { lo, hi });
        }
        Ok(Band { lo, hi })
    }

    /// Band of variances from a band of volatilities `[sigma_lo, sigma_hi]`.
    pub fn from_vols(sigma_lo: f64, sigma_hi: f64) -> Result<Band> {
        if !(sigma_lo >= 0.0 && sigma_lo <= sigma_hi) {
            return Err(Error::InvalidBand {
                lo: sigma_lo,
                hi: sigma_hi,
            });
        }
        Band::new(sigma_lo * sigma_lo, sigma_hi * sigma_hi)
    }

    pub fn point(v: f64) -> Result<Band> {
        Band::new(v, v)
    }

    #[inline]
    pub fn endpoint(&self, hi: bool) -> f64 {
        if hi {
            self.hi
        } else {
            self.lo
        }
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    pub fn is_degenerate(&self) -> bool {
        self.lo == self.hi
    }
}

impl TryFrom<[f64; 2]> for Band {
    type Error = Error;

    fn try_from(v: [f64; 2]) -> Result<Band> {
        Band::new(v[0], v[1])
    }
}

impl From<Band> for [f64; 2] {
    fn from(b: Band) -> [f64; 2] {
        [b.lo, b.hi]
    }
}

/// A vertex of an uncertainty box: bit `j` set selects `hi_j`, clear selects `lo_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct Vertex(pub u32);

impl Vertex {
    pub const ALL_LO: Vertex = Vertex(0);

    #[inline]
    pub fn is_hi(self, j: usize) -> bool {
        self.0 >> j & 1 == 1
    }

    /// 0 for lo, 1 for hi; the encoding used in CSV vertex columns.
    pub fn bit(self, j: usize) -> u8 {
        u8::from(self.is_hi(j))
    }
}

/// Axis-aligned box of per-dimension variance bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Band>", into = "Vec<Band>")]
pub struct UncertaintyBox {
    bands: Vec<Band>,
}

/// Dimension cap for vertex enumeration.
pub const MAX_BOX_DIM: usize = 16;

impl UncertaintyBox {
    pub fn new(bands: Vec<Band>) -> Result<UncertaintyBox> {
        if bands.is_empty() {
            return Err(Error::Dimension("uncertainty box needs at least one band".into()));
        }
        if bands.len() > MAX_BOX_DIM {
            return Err(Error::Dimension(format!(
                "uncertainty box dimension {} exceeds {MAX_BOX_DIM}",
                bands.len()
            )));
        }
        for b in &bands {
            Band::new(b.lo, b.hi)?;
        }
        Ok(UncertaintyBox { bands })
    }

    pub fn single(lo: f64, hi: f64) -> Result<UncertaintyBox> {
        UncertaintyBox::new(vec![Band::new(lo, hi)?])
    }

    pub fn dim(&self) -> usize {
        self.bands.len()
    }

    pub fn bands(&self) -> &[Band] {
        &self.bands
    }

    pub fn band(&self, j: usize) -> Band {
        self.bands[j]
    }

    pub fn vertex_count(&self) -> u32 {
        1 << self.bands.len()
    }

    pub fn vertices(&self) -> impl Iterator<Item = Vertex> {
        (0..self.vertex_count()).map(Vertex)
    }

    /// Variance rate of dimension `j` at vertex `v`.
    #[inline]
    pub fn value(&self, v: Vertex, j: usize) -> f64 {
        self.bands[j].endpoint(v.is_hi(j))
    }

    /// Whether `other` is contained in this box, band by band.
    pub fn contains_box(&self, other: &UncertaintyBox) -> bool {
        self.dim() == other.dim()
            && self
                .bands
                .iter()
                .zip(&other.bands)
                .all(|(a, b)| a.lo <= b.lo && b.hi <= a.hi)
    }
}

impl TryFrom<Vec<Band>> for UncertaintyBox {
    type Error = Error;

    fn try_from(b: Vec<Band>) -> Result<UncertaintyBox> {
        UncertaintyBox::new(b)
    }
}

impl From<UncertaintyBox> for Vec<Band> {
    fn from(b: UncertaintyBox) -> Vec<Band> {
        b.bands
    }
}

/// Optimal value together with the attaining vertex.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GFunctionValue {
    pub value: f64,
    pub vertex: Vertex,
}

/// `½ inf_{v ∈ band} v·a = ½(lo·a⁺ − hi·a⁻)`.
pub fn g_star(a: f64, band: Band) -> GFunctionValue {
    if a >= 0.0 {
        GFunctionValue {
            value: 0.5 * (band.lo * a),
            vertex: Vertex(0),
        }
    } else {
        GFunctionValue {
            value: 0.5 * (band.hi * a),
            vertex: Vertex(1),
        }
    }
}

/// `½ sup_{v ∈ band} v·a`, computed as `−g_star(−a)`.
pub fn g_sup(a: f64, band: Band) -> GFunctionValue {
    let dual = g_star(-a, band);
    GFunctionValue {
        value: -dual.value,
        vertex: if a > 0.0 { Vertex(1) } else { Vertex(0) },
    }
}

pub fn g_function(a: f64, band: Band, mode: Mode) -> GFunctionValue {
    match mode {
        Mode::Inf => g_star(a, band),
        Mode::Sup => g_sup(a, band),
    }
}

/// Optimizes `c0 + Σ_j c_j·v_j` over the vertices of `bx`.
///
/// The objective is affine in each `v_j`, so the optimum is attained at a
/// vertex and each coordinate can be chosen independently. Ties go to `lo`.
pub fn optimize_box_affine(
    c0: f64,
    c: &[f64],
    bx: &UncertaintyBox,
    mode: Mode,
) -> Result<GFunctionValue> {
    if c.len() != bx.dim() {
        return Err(Error::Dimension(format!(
            "{} coefficients for a box of dimension {}",
            c.len(),
            bx.dim()
        )));
    }
    let mut value = c0;
    let mut vertex = 0u32;
    for (j, (&cj, band)) in c.iter().zip(bx.bands()).enumerate() {
        let lo = cj * band.lo;
        let hi = cj * band.hi;
        if mode.better(hi, lo) {
            value += hi;
            vertex |= 1 << j;
        } else {
            value += lo;
        }
    }
    Ok(GFunctionValue {
        value,
        vertex: Vertex(vertex),
    })
}

/// Exhaustive optimization of an arbitrary objective over the box vertices.
/// The first (lowest-index) optimal vertex wins ties.
pub fn optimize_vertices<F>(bx: &UncertaintyBox, mode: Mode, mut objective: F) -> GFunctionValue
where
    F: FnMut(Vertex) -> f64,
{
    let mut best = GFunctionValue {
        value: objective(Vertex(0)),
        vertex: Vertex(0),
    };
    for k in 1..bx.vertex_count() {
        let v = objective(Vertex(k));
        if mode.better(v, best.value) {
            best = GFunctionValue {
                value: v,
                vertex: Vertex(k),
            };
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn band(lo: f64, hi: f64) -> Band {
        Band::new(lo, hi).unwrap()
    }

    #[test]
    fn g_star_examples() {
        let b = band(1.0, 4.0);
        let r = g_star(0.0, b);
        assert_eq!(r.value, 0.0);
        let r = g_star(2.0, b);
        assert_eq!((r.value, r.vertex), (1.0, Vertex(0)));
        let r = g_star(-2.0, b);
        assert_eq!((r.value, r.vertex), (-4.0, Vertex(1)));
        let r = g_sup(2.0, b);
        assert_eq!((r.value, r.vertex), (4.0, Vertex(1)));
    }

    #[test]
    fn box_affine_examples() {
        let b1 = UncertaintyBox::single(1.0, 4.0).unwrap();
        let r = optimize_box_affine(0.0, &[3.0], &b1, Mode::Inf).unwrap();
        assert_eq!((r.value, r.vertex), (3.0, Vertex(0)));
        let r = optimize_box_affine(0.0, &[-3.0], &b1, Mode::Inf).unwrap();
        assert_eq!((r.value, r.vertex), (-12.0, Vertex(1)));

        let b2 = UncertaintyBox::new(vec![band(1.0, 4.0), band(0.25, 1.0)]).unwrap();
        let r = optimize_box_affine(1.0, &[2.0, -1.0], &b2, Mode::Inf).unwrap();
        assert_eq!(r.value, 2.0);
        assert!(!r.vertex.is_hi(0) && r.vertex.is_hi(1));

        assert!(matches!(
            optimize_box_affine(0.0, &[1.0, 2.0], &b1, Mode::Inf),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn invalid_bands_rejected() {
        assert!(Band::new(2.0, 1.0).is_err());
        assert!(Band::new(-1.0, 1.0).is_err());
        assert!(Band::new(0.0, f64::INFINITY).is_err());
        assert!(UncertaintyBox::new(vec![]).is_err());
        assert!(serde_json::from_str::<Band>("[3, 1]").is_err());
    }

    #[test]
    fn ties_prefer_lowest_vertex() {
        let b2 = UncertaintyBox::new(vec![band(1.0, 4.0), band(1.0, 4.0)]).unwrap();
        for mode in [Mode::Inf, Mode::Sup] {
            let r = optimize_box_affine(0.0, &[0.0, 0.0], &b2, mode).unwrap();
            assert_eq!(r.vertex, Vertex(0));
            let r = optimize_vertices(&b2, mode, |_| 1.0);
            assert_eq!(r.vertex, Vertex(0));
        }
    }

    #[test]
    fn mode_serde_aliases() {
        assert_eq!(serde_json::from_str::<Mode>("\"super\"").unwrap(), Mode::Inf);
        assert_eq!(serde_json::from_str::<Mode>("\"sub\"").unwrap(), Mode::Sup);
        assert_eq!(serde_json::from_str::<Mode>("\"inf\"").unwrap(), Mode::Inf);
    }

    fn arb_band() -> impl Strategy<Value = Band> {
        (0.0f64..5.0, 0.0f64..5.0).prop_map(|(a, w)| Band::new(a, a + w).unwrap())
    }

    proptest! {
        #[test]
        fn duality_is_exact(a in -1e3f64..1e3, b in arb_band()) {
            prop_assert_eq!(g_sup(a, b).value, -g_star(-a, b).value);
        }

        #[test]
        fn positive_homogeneity(a in -1e3f64..1e3, lambda in 0.0f64..100.0, b in arb_band()) {
            let lhs = g_star(lambda * a, b).value;
            let rhs = lambda * g_star(a, b).value;
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn monotone_in_coefficient(a in -1e3f64..1e3, d in 0.0f64..1e3, b in arb_band()) {
            prop_assert!(g_star(a, b).value <= g_star(a + d, b).value);
            prop_assert!(g_sup(a, b).value <= g_sup(a + d, b).value);
        }

        #[test]
        fn vertex_optimum_beats_dense_grid(
            c0 in -10.0f64..10.0,
            c in prop::collection::vec(-10.0f64..10.0, 1..3),
            bands in prop::collection::vec(arb_band(), 2),
            sup in any::<bool>(),
        ) {
            let mode = if sup { Mode::Sup } else { Mode::Inf };
            let bx = UncertaintyBox::new(bands[..c.len()].to_vec()).unwrap();
            let r = optimize_box_affine(c0, &c, &bx, mode).unwrap();
            let grid = |b: Band, k: usize| b.lo + (b.hi - b.lo) * k as f64 / 100.0;
            let mut best = if sup { f64::NEG_INFINITY } else { f64::INFINITY };
            if c.len() == 1 {
                for k in 0..=100 {
                    let v = c0 + c[0] * grid(bx.band(0), k);
                    if mode.better(v, best) { best = v; }
                }
            } else {
                for k in 0..=100 {
                    for l in 0..=100 {
                        let v = c0 + c[0] * grid(bx.band(0), k) + c[1] * grid(bx.band(1), l);
                        if mode.better(v, best) { best = v; }
                    }
                }
            }
            prop_assert!((r.value - best).abs() <= 1e-12 * (1.0 + best.abs()));
            let by_enum = optimize_vertices(&bx, mode, |v| {
                c0 + (0..bx.dim()).map(|j| c[j] * bx.value(v, j)).sum::<f64>()
            });
            prop_assert!((by_enum.value - r.value).abs() <= 1e-12 * (1.0 + best.abs()));
        }
    }
}
