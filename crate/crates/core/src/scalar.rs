//! Numeric abstraction shared by the kernels.
//!
//! Kernels are written once over [`Scalar`] and instantiated with `f64` for
//! production, `i64` for bit-exact integer checks, and [`Counted`] to count the
//! real multiplications, additions and table fetches a kernel actually performs.

use std::cell::Cell;
use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + Send
    + Sync
{
    fn zero() -> Self;

    /// Hook invoked once per lookup-table fetch.
    #[inline(always)]
    fn note_fetch() {}
}

impl Scalar for f64 {
    #[inline(always)]
    fn zero() -> Self {
        0.0
    }
}

impl Scalar for i64 {
    #[inline(always)]
    fn zero() -> Self {
        0
    }
}

thread_local! {
    static MULS: Cell<u64> = const { Cell::new(0) };
    static ADDS: Cell<u64> = const { Cell::new(0) };
    static FETCHES: Cell<u64> = const { Cell::new(0) };
}

/// Operation tallies collected while running a kernel over [`Counted`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub mults: u64,
    pub adds: u64,
    pub fetches: u64,
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;
    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            mults: self.mults + o.mults,
            adds: self.adds + o.adds,
            fetches: self.fetches + o.fetches,
        }
    }
}

/// An `f64` that tallies every multiply and add/subtract into thread-local
/// counters. Negation is a sign flip and is not counted.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Counted(pub f64);

impl Add for Counted {
    type Output = Counted;
    #[inline]
    fn add(self, o: Counted) -> Counted {
        ADDS.with(|c| c.set(c.get() + 1));
        Counted(self.0 + o.0)
    }
}

impl Sub for Counted {
    type Output = Counted;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn sub(self, o: Counted) -> Counted {
        ADDS.with(|c| c.set(c.get() + 1));
        Counted(self.0 - o.0)
    }
}

impl Mul for Counted {
    type Output = Counted;
    #[inline]
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn mul(self, o: Counted) -> Counted {
        MULS.with(|c| c.set(c.get() + 1));
        Counted(self.0 * o.0)
    }
}

impl Neg for Counted {
    type Output = Counted;
    #[inline]
    fn neg(self) -> Counted {
        Counted(-self.0)
    }
}

impl Scalar for Counted {
    fn zero() -> Self {
        Counted(0.0)
    }

    fn note_fetch() {
        FETCHES.with(|c| c.set(c.get() + 1));
    }
}

fn snapshot() -> OpCounts {
    OpCounts {
        mults: MULS.with(Cell::get),
        adds: ADDS.with(Cell::get),
        fetches: FETCHES.with(Cell::get),
    }
}

/// Runs `f` on the current thread and returns the operations it performed on
/// [`Counted`] values.
pub fn count_ops<R>(f: impl FnOnce() -> R) -> (R, OpCounts) {
    let before = snapshot();
    let out = f();
    let after = snapshot();
    (
        out,
        OpCounts {
            mults: after.mults - before.mults,
            adds: after.adds - before.adds,
            fetches: after.fetches - before.fetches,
        },
    )
}

pub fn to_counted(xs: &[f64]) -> Vec<Counted> {
    xs.iter().copied().map(Counted).collect()
}

pub fn from_counted(xs: &[Counted]) -> Vec<f64> {
    xs.iter().map(|c| c.0).collect()
}
