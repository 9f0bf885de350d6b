/// 64-entry sliding anti-replay window over 48-bit record sequence numbers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReplayWindow {
    highest: Option<u64>,
    /// Bit `i` set means `highest - i` was accepted.
    bitmap: u64,
}

impl ReplayWindow {
    pub const SIZE: u64 = 64;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn highest(&self) -> Option<u64> {
        self.highest
    }

    /// Whether `seq` may still be accepted.
    pub fn check(&self, seq: u64) -> bool {
        match self.highest {
            None => true,
            Some(h) if seq > h => true,
            Some(h) => {
                let age = h - seq;
                age < Self::SIZE && self.bitmap & (1 << age) == 0
            }
        }
    }

    /// Marks `seq` as accepted. Call only after [`ReplayWindow::check`] and
    /// successful authentication.
    pub fn mark(&mut self, seq: u64) {
        match self.highest {
            None => {
                self.highest = Some(seq);
                self.bitmap = 1;
            }
            Some(h) if seq > h => {
                let shift = seq - h;
                self.bitmap = if shift >= Self::SIZE {
                    1
                } else {
                    (self.bitmap << shift) | 1
                };
                self.highest = Some(seq);
            }
            Some(h) => {
                let age = h - seq;
                if age < Self::SIZE {
                    self.bitmap |= 1 << age;
                }
            }
        }
    }
}
