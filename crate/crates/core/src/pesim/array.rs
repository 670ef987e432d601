//! One 6×6 PE array: six PE lines of six multipliers, each with a feature
//! register and a multiplicand register.

use super::{PE_COLS, PE_COUNT, PE_ROWS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PeMode {
    /// One kernel tap per cycle, broadcast down every column.
    Conv,
    /// Every PE holds its own attention mask value.
    Attention,
}

#[derive(Debug, Clone)]
pub struct PeArray {
    /// Input channel served by this array, `None` when idle.
    pub channel: Option<usize>,
    pub mode: PeMode,
    /// Cached feature window, PEL-major (`features[line * 6 + pe]`).
    features: [i32; PE_COUNT],
    /// Circular weight-row register; the tap at the last occupied slot is on
    /// the broadcast bus.
    weight_row: [i16; PE_COLS],
    row_len: usize,
    masks: [u16; PE_COUNT],
}

impl Default for PeArray {
    fn default() -> Self {
        Self {
            channel: None,
            mode: PeMode::Conv,
            features: [0; PE_COUNT],
            weight_row: [0; PE_COLS],
            row_len: 0,
            masks: [0; PE_COUNT],
        }
    }
}

impl PeArray {
    pub fn features(&self) -> &[i32; PE_COUNT] {
        &self.features
    }

    pub fn features_mut(&mut self) -> &mut [i32; PE_COUNT] {
        &mut self.features
    }

    /// Loads a kernel row. Taps are stored reversed so that each right shift
    /// brings the next tap to the bus.
    pub fn load_weight_row(&mut self, taps: impl ExactSizeIterator<Item = i16>) {
        let n = taps.len();
        assert!(n > 0 && n <= PE_COLS, "weight row of {n} taps");
        for (i, t) in taps.enumerate() {
            self.weight_row[n - 1 - i] = t;
        }
        self.row_len = n;
    }

    /// Tap currently broadcast to every PE.
    #[inline]
    pub fn broadcast(&self) -> i16 {
        self.weight_row[self.row_len - 1]
    }

    /// Circular right shift of the weight-row register.
    #[inline]
    pub fn shift_weights(&mut self) {
        self.weight_row[..self.row_len].rotate_right(1);
    }

    pub fn set_mask(&mut self, pe: usize, mask: u16) {
        self.masks[pe] = mask;
    }

    pub fn masks(&self) -> &[u16; PE_COUNT] {
        &self.masks
    }

    /// The multiplicand each PE sees this cycle, PEL-major.
    pub fn multiplicands(&self) -> [[i32; PE_COLS]; PE_ROWS] {
        let mut m = [[0; PE_COLS]; PE_ROWS];
        for (line, row) in m.iter_mut().enumerate() {
            for (pe, v) in row.iter_mut().enumerate() {
                *v = match self.mode {
                    PeMode::Conv => i32::from(self.broadcast()),
                    PeMode::Attention => i32::from(self.masks[line * PE_COLS + pe]),
                };
            }
        }
        m
    }

    /// All 36 multipliers fire once.
    #[inline]
    pub fn multiply(&self, out: &mut [i64; PE_COUNT]) {
        match self.mode {
            PeMode::Conv => {
                let w = i64::from(self.broadcast());
                for (o, &f) in out.iter_mut().zip(&self.features) {
                    *o = w * i64::from(f);
                }
            }
            PeMode::Attention => {
                for ((o, &f), &m) in out.iter_mut().zip(&self.features).zip(&self.masks) {
                    *o = i64::from(m) * i64::from(f);
                }
            }
        }
    }
}
