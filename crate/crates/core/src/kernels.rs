//! Poisson (unit circle) and heat (real line) kernel dictionaries.
//!
//! Every atom is a positive kernel that integrates to one against the
//! reference measure of its boundary: `dt / 2π` on the circle and `dx` on the
//! line. Both families are semigroups, which gives closed forms for their
//! inner products and for the harmonic / caloric extension of each atom into
//! the interior:
//!
//! * disk: `⟨P_{r1,α1}, P_{r2,α2}⟩ = P_{r1 r2}(α1 − α2)` and the atom
//!   `P_{r,α}` extends to `(ρ, θ) ↦ P_{ρ r}(θ − α)`;
//! * heat: `⟨φ_{s1}(· − y1), φ_{s2}(· − y2)⟩ = φ_{s1+s2}(y1 − y2)` and the atom
//!   `φ_s(· − y)` extends to `(t, x) ↦ φ_{t+s}(x − y)`.
//!
//! Multiple kernels (multiplicity `l > 1`) are parameter derivatives of order
//! `l − 1`, taken along `∂/∂r` for disk atoms and `∂/∂s` for heat atoms.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Default relative step of the finite-difference derivative route.
pub const FD_REL_STEP: f64 = 1e-4;

/// Which dictionary an atom belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    /// Poisson kernels of the unit disk, boundary = unit circle.
    Disk,
    /// Heat kernels on the real line, boundary = initial time slice.
    Heat,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Disk => "disk",
            Family::Heat => "heat",
        }
    }
}

/// A point `r·e^{iα}` of the open unit disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskParam {
    r: f64,
    alpha: f64,
}

impl DiskParam {
    pub fn new(r: f64, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&r) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "disk parameter needs 0 <= r < 1 and finite angle, got r = {r}, alpha = {alpha}"
            )));
        }
        Ok(Self {
            r,
            alpha: reduce_angle(alpha),
        })
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// The parameter as a complex number.
    pub fn point(&self) -> Complex64 {
        Complex64::from_polar(self.r, self.alpha)
    }
}

/// A point `(s, y)` of the upper half-plane, `s > 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatParam {
    s: f64,
    y: f64,
}

impl HeatParam {
    pub fn new(s: f64, y: f64) -> Result<Self> {
        if !(s > 0.0 && s.is_finite()) || !y.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "heat parameter needs s > 0 and finite location, got s = {s}, y = {y}"
            )));
        }
        Ok(Self { s, y })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn y(&self) -> f64 {
        self.y
    }
}

/// Location of a dictionary atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    Disk(DiskParam),
    Heat(HeatParam),
}

impl Atom {
    pub fn disk(r: f64, alpha: f64) -> Result<Self> {
        DiskParam::new(r, alpha).map(Atom::Disk)
    }

    pub fn heat(s: f64, y: f64) -> Result<Self> {
        HeatParam::new(s, y).map(Atom::Heat)
    }

    pub fn family(&self) -> Family {
        match self {
            Atom::Disk(_) => Family::Disk,
            Atom::Heat(_) => Family::Heat,
        }
    }

    /// The two real coordinates `(r, α)` or `(s, y)`.
    pub fn coords(&self) -> (f64, f64) {
        match self {
            Atom::Disk(p) => (p.r, p.alpha),
            Atom::Heat(p) => (p.s, p.y),
        }
    }

    /// Order-`m` parameter derivative of the atom evaluated at a boundary
    /// coordinate (angle on the circle, position on the line). `m = 0` is the
    /// kernel itself.
    pub fn boundary_derivative(&self, m: u32, coord: f64) -> f64 {
        match self {
            Atom::Disk(p) => disk_radial_derivative(1.0, p.r, coord - p.alpha, m),
            Atom::Heat(p) => heat_time_derivative(p.s, coord - p.y, m),
        }
    }
}

/// A dictionary element: an atom together with its multiplicity `l ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParam {
    pub atom: Atom,
    multiplicity: u32,
}

impl KernelParam {
    pub fn plain(atom: Atom) -> Self {
        Self {
            atom,
            multiplicity: 1,
        }
    }

    pub fn with_multiplicity(atom: Atom, multiplicity: u32) -> Result<Self> {
        if multiplicity == 0 {
            return Err(Error::InvalidParameter(
                "multiplicity order starts at 1".into(),
            ));
        }
        Ok(Self { atom, multiplicity })
    }

    pub fn multiplicity(&self) -> u32 {
        self.multiplicity
    }

    /// Number of parameter derivatives applied to the plain kernel.
    pub fn derivative_order(&self) -> u32 {
        self.multiplicity - 1
    }

    pub fn family(&self) -> Family {
        self.atom.family()
    }

    /// Boundary trace of the (multiple) kernel at `coord`.
    pub fn eval(&self, coord: f64) -> f64 {
        self.atom.boundary_derivative(self.derivative_order(), coord)
    }
}

/// Evaluation point for lifted atoms. The boundary itself is `rho = 1`
/// (disk) or `t = 0` (heat).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Point {
    Disk { rho: f64, theta: f64 },
    Heat { t: f64, x: f64 },
}

impl Point {
    pub fn family(&self) -> Family {
        match self {
            Point::Disk { .. } => Family::Disk,
            Point::Heat { .. } => Family::Heat,
        }
    }
}

fn reduce_angle(alpha: f64) -> f64 {
    let a = alpha.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if a >= TAU {
        0.0
    } else {
        a
    }
}

/// Circle Poisson kernel `P_r(t − α) = (1 − r²) / (1 − 2r cos(t − α) + r²)`.
pub fn poisson_eval(q: &DiskParam, t: f64) -> f64 {
    let r = q.r;
    (1.0 - r * r) / (1.0 - 2.0 * r * (t - q.alpha).cos() + r * r)
}

/// Heat kernel `φ_s(x − y) = (4πs)^{-1/2} exp(−(x − y)² / 4s)`.
pub fn heat_eval(q: &HeatParam, x: f64) -> f64 {
    gaussian(q.s, x - q.y)
}

fn gaussian(tau: f64, d: f64) -> f64 {
    (-d * d / (4.0 * tau)).exp() / (4.0 * PI * tau).sqrt()
}

fn factorial(n: u32) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * f64::from(k))
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * f64::from(n - j) / f64::from(j + 1))
}

/// Physicists' Hermite polynomial `H_n(u)`.
fn hermite(n: u32, u: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, 2.0 * u);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = 2.0 * u * cur - 2.0 * f64::from(k) * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// `∂_r^m P_{ρ r}(φ)`.
///
/// With `z = ρ r e^{iφ}` the kernel is `Re[(1 + z)/(1 − z)]`, so for `m ≥ 1`
/// the derivative is `Re[2 m! (ρ e^{iφ})^m (1 − z)^{-(m+1)}]`.
pub(crate) fn disk_radial_derivative(rho: f64, r: f64, phi: f64, m: u32) -> f64 {
    if m == 0 {
        let a = rho * r;
        return (1.0 - a * a) / (1.0 - 2.0 * a * phi.cos() + a * a);
    }
    let dir = Complex64::from_polar(rho, phi);
    let one_minus_z = Complex64::new(1.0, 0.0) - dir * r;
    let num = dir.powu(m) * (2.0 * factorial(m));
    (num / one_minus_z.powu(m + 1)).re
}

/// `∂_τ^m φ_τ(d) = (4τ)^{-m} H_{2m}(d / 2√τ) φ_τ(d)`, using `∂_τ φ = ∂_d² φ`.
pub(crate) fn heat_time_derivative(tau: f64, d: f64, m: u32) -> f64 {
    let g = gaussian(tau, d);
    if m == 0 {
        return g;
    }
    let u = d / (2.0 * tau.sqrt());
    hermite(2 * m, u) * g / (4.0 * tau).powi(m as i32)
}

/// Order-`order` parameter derivative of the plain kernel at a boundary
/// coordinate, in closed form for every order.
pub fn kernel_param_derivative(atom: &Atom, order: u32, coord: f64) -> Result<f64> {
    if order == 0 {
        return Err(Error::InvalidParameter("derivative order must be >= 1".into()));
    }
    Ok(atom.boundary_derivative(order, coord))
}

/// Finite-difference route to the same derivative: the first derivative is
/// analytic, higher orders apply central differences of order `order − 1` to
/// it with step `rel_step·(1 − r)` (disk) or `rel_step·s` (heat).
pub fn kernel_param_derivative_fd(
    atom: &Atom,
    order: u32,
    coord: f64,
    rel_step: f64,
) -> Result<f64> {
    if order == 0 {
        return Err(Error::InvalidParameter("derivative order must be >= 1".into()));
    }
    if order == 1 {
        return Ok(atom.boundary_derivative(1, coord));
    }
    let p = order - 1;
    let half_span = f64::from(p) / 2.0;
    let (base, h, first): (f64, f64, Box<dyn Fn(f64) -> f64>) = match *atom {
        Atom::Disk(q) => {
            let h = rel_step * (1.0 - q.r);
            if q.r + half_span * h >= 1.0 || h <= 0.0 {
                return Err(Error::StepUnderflow { param: q.r, step: h });
            }
            let phi = coord - q.alpha;
            (q.r, h, Box::new(move |r| disk_radial_derivative(1.0, r, phi, 1)))
        }
        Atom::Heat(q) => {
            let h = rel_step * q.s;
            if q.s - half_span * h <= 0.0 || h <= 0.0 {
                return Err(Error::StepUnderflow { param: q.s, step: h });
            }
            let d = coord - q.y;
            (q.s, h, Box::new(move |s| heat_time_derivative(s, d, 1)))
        }
    };
    let sum: f64 = (0..=p)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * binomial(p, j) * first(base + (half_span - f64::from(j)) * h)
        })
        .sum();
    Ok(sum / h.powi(p as i32))
}

/// Value of the lifted (possibly multiple) kernel at an interior point.
pub fn lift_atom(q: &KernelParam, point: Point) -> Result<f64> {
    let m = q.derivative_order();
    match (q.atom, point) {
        (Atom::Disk(a), Point::Disk { rho, theta }) => {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::InvalidParameter(format!(
                    "disk lift needs 0 <= rho <= 1, got {rho}"
                )));
            }
            Ok(disk_radial_derivative(rho, a.r, theta - a.alpha, m))
        }
        (Atom::Heat(a), Point::Heat { t, x }) => {
            if !(t >= 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "heat lift needs t >= 0, got {t}"
                )));
            }
            Ok(heat_time_derivative(t + a.s, x - a.y, m))
        }
        _ => Err(Error::MixedFamily),
    }
}

/// Closed-form inner product of two (multiple) kernels on the boundary.
pub fn kernel_inner(a: &KernelParam, b: &KernelParam) -> Result<f64> {
    let (da, db) = (a.derivative_order(), b.derivative_order());
    match (a.atom, b.atom) {
        (Atom::Disk(p), Atom::Disk(q)) => Ok(disk_inner(p, da, q, db)),
        (Atom::Heat(p), Atom::Heat(q)) => Ok(heat_time_derivative(p.s + q.s, p.y - q.y, da + db)),
        _ => Err(Error::MixedFamily),
    }
}

/// `∂_{r1}^a ∂_{r2}^b P_{r1 r2}(α1 − α2)`.
///
/// Writing `x = r1`, `y = r2`, `w = e^{i(α1 − α2)}`, the kernel is
/// `Re[−1 + 2 / (1 − x y w)]` and Leibniz' rule on
/// `∂_y^b (1 − xyw)^{-1} = b! (xw)^b (1 − xyw)^{-(b+1)}` gives the sum below.
fn disk_inner(p: DiskParam, a: u32, q: DiskParam, b: u32) -> f64 {
    let (x, y) = (p.r, q.r);
    let w = Complex64::from_polar(1.0, p.alpha - q.alpha);
    let base = Complex64::new(1.0, 0.0) - w * (x * y);
    let mut s = Complex64::new(0.0, 0.0);
    for j in 0..=a.min(b) {
        let coef = binomial(a, j) * factorial(b) * factorial(a + b - j) / factorial(b - j);
        let term = (w * y).powu(a - j) * x.powi((b - j) as i32) / base.powu(a + b - j + 1);
        s += term * coef;
    }
    s *= w.powu(b);
    let v = 2.0 * s.re;
    if a == 0 && b == 0 {
        v - 1.0
    } else {
        v
    }
}

/// `‖K̃_q‖ = sqrt(⟨K̃_q, K̃_q⟩)`.
pub fn kernel_norm(q: &KernelParam) -> Result<f64> {
    let sq = kernel_inner(q, q)?;
    if !(sq > f64::MIN_POSITIVE) || !sq.is_finite() {
        return Err(Error::DegenerateKernel(sq));
    }
    Ok(sq.sqrt())
}
