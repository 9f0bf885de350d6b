//! Cycle clock: the x86 time-stamp counter where it is invariant, otherwise
//! monotonic nanoseconds scaled by a caller-supplied nominal frequency.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::packet_io::monotonic_ns;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockSource {
    Tsc,
    Monotonic,
}

impl fmt::Display for ClockSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClockSource::Tsc => "tsc",
            ClockSource::Monotonic => "monotonic",
        })
    }
}

impl FromStr for ClockSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tsc" => Ok(ClockSource::Tsc),
            "monotonic" => Ok(ClockSource::Monotonic),
            other => Err(format!("unknown clock source {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleClock {
    source: ClockSource,
    nominal_hz: f64,
}

impl CycleClock {
    /// Fails for a non-positive frequency or a TSC request on a machine
    /// without an invariant TSC.
    pub fn new(source: ClockSource, nominal_hz: f64) -> Result<Self, String> {
        if !(nominal_hz > 0.0) || !nominal_hz.is_finite() {
            return Err(format!("nominal_hz must be positive, got {nominal_hz}"));
        }
        if source == ClockSource::Tsc && !tsc_available() {
            return Err("no invariant time-stamp counter on this machine".into());
        }
        Ok(Self { source, nominal_hz })
    }

    pub fn monotonic(nominal_hz: f64) -> Self {
        Self::new(ClockSource::Monotonic, nominal_hz).expect("positive frequency")
    }

    /// TSC when invariant, monotonic otherwise.
    pub fn best(nominal_hz: f64) -> Self {
        let source = if tsc_available() {
            ClockSource::Tsc
        } else {
            ClockSource::Monotonic
        };
        Self::new(source, nominal_hz).expect("positive frequency")
    }

    pub fn source(&self) -> ClockSource {
        self.source
    }

    pub fn nominal_hz(&self) -> f64 {
        self.nominal_hz
    }

    #[inline]
    pub fn now(&self) -> u64 {
        match self.source {
            ClockSource::Tsc => read_tsc(),
            ClockSource::Monotonic => (monotonic_ns() as f64 * self.nominal_hz / 1e9) as u64,
        }
    }

    pub fn cycles_to_secs(&self, cycles: u64) -> f64 {
        cycles as f64 / self.nominal_hz
    }
}

#[cfg(target_arch = "x86_64")]
#[allow(unused_unsafe)]
pub fn tsc_available() -> bool {
    use std::arch::x86_64::__cpuid;
    // SAFETY: cpuid is available on every x86_64 processor.
    let max_ext = unsafe { __cpuid(0x8000_0000) }.eax;
    if max_ext < 0x8000_0007 {
        return false;
    }
    // Invariant TSC flag.
    unsafe { __cpuid(0x8000_0007) }.edx & (1 << 8) != 0
}

#[cfg(not(target_arch = "x86_64"))]
pub fn tsc_available() -> bool {
    false
}

#[cfg(target_arch = "x86_64")]
#[inline]
fn read_tsc() -> u64 {
    use std::arch::x86_64::{_mm_lfence, _rdtsc};
    // SAFETY: both intrinsics are baseline x86_64.
    unsafe {
        _mm_lfence();
        let t = _rdtsc();
        _mm_lfence();
        t
    }
}

#[cfg(not(target_arch = "x86_64"))]
#[inline]
fn read_tsc() -> u64 {
    unreachable!("TSC clock is only constructed on x86_64")
}
