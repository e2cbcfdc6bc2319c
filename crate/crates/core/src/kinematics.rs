//! Position analysis of planar four-bar linkages.
//!
//! The ground link lies on the x-axis with the input pivot `O2` at the origin
//! and the output pivot `O4` at `(r1, 0)`. The input link `r2` ends at the
//! A-joint, the output link `r4` ends at the B-joint and the coupler `r3`
//! connects the two. All angles are measured counterclockwise from +x.

use std::f64::consts::{PI, TAU};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tolerance below which a `T` parameter is treated as zero (folding).
pub const DEFAULT_FOLD_TOL: f64 = 1e-6;

/// Tolerance on the triangle gaps of coupler and output link, scaled by
/// `r1 + r2 + r3 + r4`. Inside it the input sits on a dead center.
const GAP_TOL: f64 = 1e-12;

/// Relative tolerance on `|C - A|`, scaled by `(r1 + r2 + r3 + r4)^2`.
const LINEAR_CASE_TOL: f64 = 1e-12;

/// Slack (rad) accepted at the ends of a rocker input interval.
const DOMAIN_SLACK: f64 = 1e-9;

/// Rows of the linear map from link lengths to `T1..T4`.
pub const T_MATRIX: [[f64; 4]; 4] = [
    [1.0, -1.0, 1.0, -1.0],
    [1.0, -1.0, -1.0, 1.0],
    [-1.0, -1.0, 1.0, 1.0],
    [1.0, 1.0, 1.0, 1.0],
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("link lengths {0:?} do not form a valid closed four-bar linkage")]
    ResultNotValidLinkage([f64; 4]),
    #[error("folding linkage: |T{index}| = {value:e} is within the folding tolerance")]
    Folding { index: usize, value: f64 },
    #[error("input angle {theta_in} rad is not reachable")]
    Unreachable { theta_in: f64 },
    #[error("internal inconsistency: {0}")]
    InternalInconsistency(String),
}

/// The four link lengths: ground, input, coupler, output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkageDims {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub r4: f64,
}

impl LinkageDims {
    pub const fn new(r1: f64, r2: f64, r3: f64, r4: f64) -> Self {
        Self { r1, r2, r3, r4 }
    }

    pub const fn from_array(r: [f64; 4]) -> Self {
        Self::new(r[0], r[1], r[2], r[3])
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.r1, self.r2, self.r3, self.r4]
    }

    pub fn perimeter(&self) -> f64 {
        self.r1 + self.r2 + self.r3 + self.r4
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(k * self.r1, k * self.r2, k * self.r3, k * self.r4)
    }

    /// Both closure conditions: every link positive and every link shorter
    /// than the sum of the other three.
    pub fn is_valid(&self) -> bool {
        let r = self.to_array();
        let sum = self.perimeter();
        r.iter().all(|&ri| ri.is_finite() && ri > 0.0 && 2.0 * ri < sum)
    }

    pub fn validate(self) -> Result<Self, KinematicsError> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(KinematicsError::ResultNotValidLinkage(self.to_array()))
        }
    }
}

/// The type parameters `T1..T3` plus the perimeter `T4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TParams {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
}

impl TParams {
    pub const fn from_array(t: [f64; 4]) -> Self {
        Self { t1: t[0], t2: t[1], t3: t[2], t4: t[3] }
    }

    pub const fn to_array(self) -> [f64; 4] {
        [self.t1, self.t2, self.t3, self.t4]
    }
}

/// The eight linkage types, keyed by the signs of `(T1, T2, T3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum LinkageType {
    CrankRocker = 1,
    RockerCrank = 2,
    DoubleCrank = 3,
    DoubleRocker = 4,
    TripleRocker00 = 5,
    TripleRocker0Pi = 6,
    TripleRockerPi0 = 7,
    TripleRockerPiPi = 8,
}

impl LinkageType {
    pub const ALL: [LinkageType; 8] = [
        LinkageType::CrankRocker,
        LinkageType::RockerCrank,
        LinkageType::DoubleCrank,
        LinkageType::DoubleRocker,
        LinkageType::TripleRocker00,
        LinkageType::TripleRocker0Pi,
        LinkageType::TripleRockerPi0,
        LinkageType::TripleRockerPiPi,
    ];

    pub const fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get(usize::from(id).checked_sub(1)?).copied()
    }

    /// Signs of `(T1, T2, T3)` as `+1.0` / `-1.0`.
    pub const fn signs(self) -> [f64; 3] {
        match self {
            LinkageType::CrankRocker => [1.0, 1.0, 1.0],
            LinkageType::RockerCrank => [1.0, -1.0, -1.0],
            LinkageType::DoubleCrank => [-1.0, -1.0, 1.0],
            LinkageType::DoubleRocker => [-1.0, 1.0, -1.0],
            LinkageType::TripleRocker00 => [-1.0, -1.0, -1.0],
            LinkageType::TripleRocker0Pi => [1.0, 1.0, -1.0],
            LinkageType::TripleRockerPi0 => [1.0, -1.0, 1.0],
            LinkageType::TripleRockerPiPi => [-1.0, 1.0, 1.0],
        }
    }

    pub fn from_signs(positive: [bool; 3]) -> Self {
        Self::ALL
            .into_iter()
            .find(|ty| {
                let s = ty.signs();
                (0..3).all(|j| (s[j] > 0.0) == positive[j])
            })
            .expect("all eight sign patterns are covered")
    }

    /// Only crank-rocker and double-crank linkages let the input link revolve fully.
    pub const fn input_is_crank(self) -> bool {
        matches!(self, LinkageType::CrankRocker | LinkageType::DoubleCrank)
    }

    pub const fn name(self) -> &'static str {
        match self {
            LinkageType::CrankRocker => "Crank Rocker",
            LinkageType::RockerCrank => "Rocker Crank",
            LinkageType::DoubleCrank => "Double Crank",
            LinkageType::DoubleRocker => "Double Rocker",
            LinkageType::TripleRocker00 => "Triple Rocker 00",
            LinkageType::TripleRocker0Pi => "Triple Rocker 0pi",
            LinkageType::TripleRockerPi0 => "Triple Rocker pi0",
            LinkageType::TripleRockerPiPi => "Triple Rocker pipi",
        }
    }
}

impl From<LinkageType> for u8 {
    fn from(ty: LinkageType) -> u8 {
        ty.id()
    }
}

impl TryFrom<u8> for LinkageType {
    type Error = String;

    fn try_from(id: u8) -> Result<Self, Self::Error> {
        Self::from_id(id).ok_or_else(|| format!("linkage type id {id} is not in 1..=8"))
    }
}

impl fmt::Display for LinkageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Geometric inversion: the sign taken in front of the radical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Inversion {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl Inversion {
    pub const BOTH: [Inversion; 2] = [Inversion::Plus, Inversion::Minus];

    pub const fn sign(self) -> f64 {
        match self {
            Inversion::Plus => 1.0,
            Inversion::Minus => -1.0,
        }
    }

    pub const fn opposite(self) -> Self {
        match self {
            Inversion::Plus => Inversion::Minus,
            Inversion::Minus => Inversion::Plus,
        }
    }

    pub const fn symbol(self) -> char {
        match self {
            Inversion::Plus => '+',
            Inversion::Minus => '-',
        }
    }

    /// Accepts `+`, `-`, `plus`, `minus`, `+1`, `-1` and `1`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "+" | "+1" | "1" | "plus" | "p" => Some(Inversion::Plus),
            "-" | "-1" | "\u{2212}" | "\u{2212}1" | "minus" | "m" => Some(Inversion::Minus),
            _ => None,
        }
    }
}

impl fmt::Display for Inversion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

/// One of the sixteen mechanism configurations.
///
/// Ordering is `(type_id, inversion)` with `+` before `-`; ranking ties are
/// broken with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TypeConfig {
    pub linkage_type: LinkageType,
    pub inversion: Inversion,
}

impl TypeConfig {
    pub const fn new(linkage_type: LinkageType, inversion: Inversion) -> Self {
        Self { linkage_type, inversion }
    }

    /// All sixteen configurations in ranking order.
    pub fn all() -> impl Iterator<Item = TypeConfig> {
        LinkageType::ALL
            .into_iter()
            .flat_map(|ty| Inversion::BOTH.into_iter().map(move |inv| TypeConfig::new(ty, inv)))
    }

    pub const fn type_id(&self) -> u8 {
        self.linkage_type.id()
    }

    /// Position of this configuration in [`TypeConfig::all`].
    pub fn index(&self) -> usize {
        (usize::from(self.type_id()) - 1) * 2
            + match self.inversion {
                Inversion::Plus => 0,
                Inversion::Minus => 1,
            }
    }

    pub fn input_is_crank(&self) -> bool {
        self.linkage_type.input_is_crank()
    }

    /// File-name friendly tag such as `t1p` or `t8m`.
    pub fn tag(&self) -> String {
        let inv = match self.inversion {
            Inversion::Plus => 'p',
            Inversion::Minus => 'm',
        };
        format!("t{}{}", self.type_id(), inv)
    }
}

impl fmt::Display for TypeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.linkage_type, self.inversion)
    }
}

/// Reachable input angles for one configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InputRange {
    /// The input link revolves fully; every angle is reachable.
    CrankFull,
    /// The input rocks between two dead-center positions. `theta_min` lies in
    /// `(-pi, pi]` and `theta_max = theta_min + arc length`, so it may exceed
    /// `pi` when the arc passes through `pi`. The cycle parameter also covers
    /// the return leg `[2pi + theta_min, 2pi + theta_max]`.
    RockerRange { theta_min: f64, theta_max: f64 },
}

/// Which half of a rocker cycle a cycle parameter falls in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Leg {
    Forward,
    Return,
}

impl InputRange {
    /// Locates a cycle parameter in the domain, returning the leg and the
    /// physical input angle to feed into [`solve_output`].
    pub fn locate(&self, phi: f64) -> Option<(Leg, f64)> {
        match *self {
            InputRange::CrankFull => Some((Leg::Forward, phi)),
            InputRange::RockerRange { theta_min, theta_max } => {
                let within = |x: f64| {
                    (x >= theta_min - DOMAIN_SLACK && x <= theta_max + DOMAIN_SLACK)
                        .then(|| x.clamp(theta_min, theta_max))
                };
                if let Some(theta) = within(phi) {
                    Some((Leg::Forward, theta))
                } else {
                    within(phi - TAU).map(|theta| (Leg::Return, theta))
                }
            }
        }
    }

    pub fn contains(&self, phi: f64) -> bool {
        self.locate(phi).is_some()
    }

    /// Arc length of one leg (`2pi` for a crank).
    pub fn arc_length(&self) -> f64 {
        match *self {
            InputRange::CrankFull => TAU,
            InputRange::RockerRange { theta_min, theta_max } => theta_max - theta_min,
        }
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(TAU);
    if a > PI {
        a -= TAU;
    }
    a
}

/// `T = M r`.
pub fn t_params(r: &LinkageDims) -> TParams {
    let r = r.to_array();
    let mut t = [0.0; 4];
    for (tj, row) in t.iter_mut().zip(T_MATRIX.iter()) {
        *tj = row.iter().zip(r.iter()).map(|(m, ri)| m * ri).sum();
    }
    TParams::from_array(t)
}

/// `r = M^T T / 4` without any validity check.
pub fn dims_from_t_unchecked(t: &TParams) -> LinkageDims {
    let t = t.to_array();
    let mut r = [0.0; 4];
    for (i, ri) in r.iter_mut().enumerate() {
        *ri = 0.25 * (0..4).map(|j| T_MATRIX[j][i] * t[j]).sum::<f64>();
    }
    LinkageDims::from_array(r)
}

/// `r = M^T T / 4`, rejecting results that are not a closed four-bar.
pub fn dims_from_t(t: &TParams) -> Result<LinkageDims, KinematicsError> {
    dims_from_t_unchecked(t).validate()
}

/// Classifies a linkage by the signs of `T1..T3`. Folding linkages (any
/// `|T_j| <= fold_tol`) are rejected.
pub fn classify(r: &LinkageDims, fold_tol: f64) -> Result<LinkageType, KinematicsError> {
    let t = t_params(r).to_array();
    for (j, &tj) in t.iter().take(3).enumerate() {
        if tj.abs() <= fold_tol {
            return Err(KinematicsError::Folding { index: j + 1, value: tj });
        }
    }
    Ok(LinkageType::from_signs([t[0] > 0.0, t[1] > 0.0, t[2] > 0.0]))
}

/// Coefficients `(A, B, C)` of `A cos(out) + B sin(out) + C = 0` for a ground
/// angle of zero.
pub fn closure_coefficients(r: &LinkageDims, theta_in: f64) -> (f64, f64, f64) {
    let (s, c) = theta_in.sin_cos();
    let a = 2.0 * r.r1 * r.r4 - 2.0 * r.r2 * r.r4 * c;
    let b = -2.0 * r.r2 * r.r4 * s;
    let cc = r.r1 * r.r1 + r.r2 * r.r2 + r.r4 * r.r4 - r.r3 * r.r3 - 2.0 * r.r1 * r.r2 * c;
    (a, b, cc)
}

/// The radical `B^2 - C^2 + A^2`; negative where the input angle cannot be reached.
pub fn radical(r: &LinkageDims, theta_in: f64) -> f64 {
    let (a, b, c) = closure_coefficients(r, theta_in);
    b * b - c * c + a * a
}

/// Output angle in `(-pi, pi]` for the given input angle and branch.
pub fn solve_output(r: &LinkageDims, theta_in: f64, branch: Inversion) -> Result<f64, KinematicsError> {
    let (a, b, c) = closure_coefficients(r, theta_in);
    let scale = r.perimeter() * r.perimeter();
    // With d = |A-joint - O4| the radical factors as
    // (r3 + r4 - d)(d - |r3 - r4|)(d + |r3 - r4|)(d + r3 + r4).
    let d = (r.r1 - r.r2 * theta_in.cos()).hypot(r.r2 * theta_in.sin());
    let outer = r.r3 + r.r4 - d;
    let inner = d - (r.r3 - r.r4).abs();
    let tol = GAP_TOL * r.perimeter();
    if outer < -tol || inner < -tol {
        return Err(KinematicsError::Unreachable { theta_in });
    }
    let disc = if outer <= tol || inner <= tol {
        0.0
    } else {
        outer * inner * (d + (r.r3 - r.r4).abs()) * (d + r.r3 + r.r4)
    };
    let root = disc.sqrt();
    let s = branch.sign();
    let denom = c - a;

    let half_tan = if denom.abs() < LINEAR_CASE_TOL * scale {
        // 2 B u + (A + C) = 0; the second root sits at u = infinity.
        if b.abs() < LINEAR_CASE_TOL * scale || s * b < 0.0 {
            return Ok(PI);
        }
        -(c + a) / (2.0 * b)
    } else {
        let numer = -b + s * root;
        if s * b > 0.0 {
            // cancellation in -B + s*sqrt: use the product of the roots instead
            (c + a) / (-b - s * root)
        } else {
            numer / denom
        }
    };
    Ok(normalize_angle(2.0 * half_tan.atan()))
}

/// Positions of the A-joint and B-joint.
pub fn joint_positions(r: &LinkageDims, theta_in: f64, theta_out: f64) -> ([f64; 2], [f64; 2]) {
    let a_joint = [r.r2 * theta_in.cos(), r.r2 * theta_in.sin()];
    let b_joint = [r.r1 + r.r4 * theta_out.cos(), r.r4 * theta_out.sin()];
    (a_joint, b_joint)
}

/// `| |A-joint - B-joint| - r3 |`; zero exactly for true configurations.
pub fn loop_closure_residual(r: &LinkageDims, theta_in: f64, theta_out: f64) -> f64 {
    let (a, b) = joint_positions(r, theta_in, theta_out);
    ((a[0] - b[0]).hypot(a[1] - b[1]) - r.r3).abs()
}

/// Input angles at which coupler and output link are collinear, as the
/// interval `[cos_lo, cos_hi]` of reachable `cos(theta_in)`.
fn reachable_cos_interval(r: &LinkageDims) -> (f64, f64) {
    let denom = 2.0 * r.r1 * r.r2;
    let base = r.r1 * r.r1 + r.r2 * r.r2;
    let lo = (base - (r.r3 + r.r4).powi(2)) / denom;
    let hi = (base - (r.r3 - r.r4).powi(2)) / denom;
    (lo, hi)
}

/// Reachable input interval for a configuration.
///
/// Crank-input types revolve fully. For rocker inputs the limits are the
/// dead-center positions. When four dead-center positions exist the input
/// has two mirror-image arcs; the one on the upper half plane is returned.
pub fn input_range(r: &LinkageDims, cfg: TypeConfig) -> Result<InputRange, KinematicsError> {
    if cfg.input_is_crank() {
        return Ok(InputRange::CrankFull);
    }
    let (lo, hi) = reachable_cos_interval(r);
    if lo > 1.0 || hi < -1.0 || lo > hi {
        return Err(KinematicsError::InternalInconsistency(format!(
            "no reachable input arc for {:?} ({cfg})",
            r.to_array()
        )));
    }
    let range = match (lo <= -1.0, hi >= 1.0) {
        (true, true) => {
            return Err(KinematicsError::InternalInconsistency(format!(
                "rocker-input configuration {cfg} revolves fully for {:?}",
                r.to_array()
            )))
        }
        // arc around 0
        (false, true) => {
            let limit = lo.acos();
            InputRange::RockerRange { theta_min: -limit, theta_max: limit }
        }
        // arc around pi
        (true, false) => {
            let limit = hi.acos();
            InputRange::RockerRange { theta_min: limit, theta_max: TAU - limit }
        }
        (false, false) => InputRange::RockerRange { theta_min: hi.acos(), theta_max: lo.acos() },
    };
    Ok(range)
}

/// The cycle-parameterised input/output map of a configuration.
///
/// On the forward leg of a rocker the configured branch is used; on the
/// return leg (`phi` shifted by `2pi`) the output switches to the opposite
/// branch after passing the dead center.
pub fn simulate_cycle(r: &LinkageDims, cfg: TypeConfig, phi: f64) -> Result<f64, KinematicsError> {
    let range = input_range(r, cfg)?;
    simulate_in_range(r, cfg, &range, phi)
}

/// [`simulate_cycle`] with a precomputed input range.
pub fn simulate_in_range(
    r: &LinkageDims,
    cfg: TypeConfig,
    range: &InputRange,
    phi: f64,
) -> Result<f64, KinematicsError> {
    match range.locate(phi) {
        Some((Leg::Forward, theta)) => solve_output(r, theta, cfg.inversion),
        Some((Leg::Return, theta)) => solve_output(r, theta, cfg.inversion.opposite()),
        None => Err(KinematicsError::Unreachable { theta_in: phi }),
    }
}
