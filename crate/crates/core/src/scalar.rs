//! Scalar abstraction shared by the geometric constraint code.
//!
//! The collision formulas are written once, generic over [`Scalar`], and run
//! with three number types:
//!
//! * `f64` for plain evaluation,
//! * [`Dual2`] for forward-mode derivatives with respect to the ego agent's
//!   path coordinate and velocity,
//! * [`Switch`] to measure how close an evaluation sits to a max/min kink.
//!
//! Every `max`/`min` uses the same tie rule for all three types, so the value
//! part of a `Dual2` evaluation is bit-identical to the `f64` evaluation.
//! At a tie the second argument wins; `pos(x) = max(x, 0)` therefore has a
//! zero derivative at `x = 0`.

use std::cell::Cell;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn value(self) -> f64;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    /// A value with known partials; types without derivatives drop them.
    fn with_partials(v: f64, _d: [f64; 2]) -> Self {
        Self::cst(v)
    }

    fn max(self, other: Self) -> Self {
        if self.value() > other.value() {
            self
        } else {
            other
        }
    }

    fn min(self, other: Self) -> Self {
        if self.value() < other.value() {
            self
        } else {
            other
        }
    }

    /// `[x]+ = max{x, 0}`
    fn pos(self) -> Self {
        self.max(Self::cst(0.0))
    }
}

impl Scalar for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// Forward-mode dual number carrying two partial derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual2 {
    pub v: f64,
    pub d: [f64; 2],
}

impl Dual2 {
    pub const fn new(v: f64, d: [f64; 2]) -> Self {
        Self { v, d }
    }
}

impl Add for Dual2 {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        Self::new(self.v + o.v, [self.d[0] + o.d[0], self.d[1] + o.d[1]])
    }
}

impl Sub for Dual2 {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        Self::new(self.v - o.v, [self.d[0] - o.d[0], self.d[1] - o.d[1]])
    }
}

impl Mul for Dual2 {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        Self::new(
            self.v * o.v,
            [
                self.d[0] * o.v + self.v * o.d[0],
                self.d[1] * o.v + self.v * o.d[1],
            ],
        )
    }
}

impl Div for Dual2 {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / (o.v * o.v);
        Self::new(
            self.v / o.v,
            [
                (self.d[0] * o.v - self.v * o.d[0]) * inv,
                (self.d[1] * o.v - self.v * o.d[1]) * inv,
            ],
        )
    }
}

impl Neg for Dual2 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self::new(-self.v, [-self.d[0], -self.d[1]])
    }
}

impl Scalar for Dual2 {
    #[inline]
    fn cst(v: f64) -> Self {
        Self::new(v, [0.0, 0.0])
    }
    #[inline]
    fn with_partials(v: f64, d: [f64; 2]) -> Self {
        Self::new(v, d)
    }
    #[inline]
    fn value(self) -> f64 {
        self.v
    }
    #[inline]
    fn sin(self) -> Self {
        let c = self.v.cos();
        Self::new(self.v.sin(), [c * self.d[0], c * self.d[1]])
    }
    #[inline]
    fn cos(self) -> Self {
        let s = -self.v.sin();
        Self::new(self.v.cos(), [s * self.d[0], s * self.d[1]])
    }
}

thread_local! {
    static SWITCH_MARGIN: Cell<f64> = const { Cell::new(f64::INFINITY) };
}

/// Plain value that records the smallest `|a - b|` seen in any `max`/`min`.
///
/// Use through [`measure_switch_margin`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Switch(pub f64);

impl Switch {
    fn record(a: f64, b: f64) {
        let gap = (a - b).abs();
        SWITCH_MARGIN.with(|m| {
            if gap < m.get() {
                m.set(gap);
            }
        });
    }
}

/// Runs `f` and returns its output together with the distance to the closest
/// max/min switch encountered by [`Switch`] values inside it.
pub fn measure_switch_margin<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let saved = SWITCH_MARGIN.with(|m| m.replace(f64::INFINITY));
    let out = f();
    let margin = SWITCH_MARGIN.with(|m| m.replace(saved));
    (out, margin)
}

impl Add for Switch {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Switch(self.0 + o.0)
    }
}
impl Sub for Switch {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Switch(self.0 - o.0)
    }
}
impl Mul for Switch {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Switch(self.0 * o.0)
    }
}
impl Div for Switch {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        Switch(self.0 / o.0)
    }
}
impl Neg for Switch {
    type Output = Self;
    fn neg(self) -> Self {
        Switch(-self.0)
    }
}

impl Scalar for Switch {
    fn cst(v: f64) -> Self {
        Switch(v)
    }
    fn value(self) -> f64 {
        self.0
    }
    fn sin(self) -> Self {
        Switch(self.0.sin())
    }
    fn cos(self) -> Self {
        Switch(self.0.cos())
    }
    fn max(self, other: Self) -> Self {
        Self::record(self.0, other.0);
        if self.0 > other.0 {
            self
        } else {
            other
        }
    }
    fn min(self, other: Self) -> Self {
        Self::record(self.0, other.0);
        if self.0 < other.0 {
            self
        } else {
            other
        }
    }
}
