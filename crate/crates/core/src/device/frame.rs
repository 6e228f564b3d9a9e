use serde::{Deserialize, Serialize};

/// Coarse luminance grid columns/rows summarising the screen.
pub const GRID_COLS: usize = 9;
pub const GRID_ROWS: usize = 16;

/// One mirrored frame. `cells` is a downscaled view of the screen; `bytes`
/// is the size the encoder spent on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub seq: u64,
    pub width: u32,
    pub height: u32,
    pub cells: Vec<u8>,
    pub bytes: u64,
}

impl Frame {
    pub fn same_content(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height && self.cells == other.cells
    }
}

/// Rate-limited frame encoder: every frame fits the per-frame share of the
/// bit-rate budget; unchanged frames cost a small fixed delta.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEncoder {
    pub bitrate_bps: u64,
    pub fps: u32,
    seq: u64,
    last_cells: Option<Vec<u8>>,
    total_bytes: u64,
}

const DELTA_FRAME_BYTES: u64 = 64;

impl Default for FrameEncoder {
    fn default() -> Self {
        Self::new(1_000_000, 30)
    }
}

impl FrameEncoder {
    pub fn new(bitrate_bps: u64, fps: u32) -> Self {
        Self { bitrate_bps, fps: fps.max(1), seq: 0, last_cells: None, total_bytes: 0 }
    }

    pub fn frame_budget_bytes(&self) -> u64 {
        self.bitrate_bps / 8 / u64::from(self.fps)
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn frames_emitted(&self) -> u64 {
        self.seq
    }

    pub fn encode(&mut self, width: u32, height: u32, cells: Vec<u8>) -> Frame {
        let budget = self.frame_budget_bytes();
        let changed = self.last_cells.as_ref() != Some(&cells);
        let bytes = if changed { budget } else { DELTA_FRAME_BYTES.min(budget) };
        self.seq += 1;
        self.total_bytes += bytes;
        self.last_cells = Some(cells.clone());
        Frame { seq: self.seq, width, height, cells, bytes }
    }
}
