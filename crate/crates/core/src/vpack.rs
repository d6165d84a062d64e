//! Slot packing for vertically partitioned inputs. Each party owns a
//! contiguous span of feature columns; the layout assigns every matrix entry
//! a distinct slot, so parties can encode their own columns (zeros elsewhere),
//! encrypt, and the encrypted concatenation of all parts is nothing more than
//! ciphertext summation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a feature matrix's columns are split across parties. `cuts[i]` is the
/// first column owned by party i; party i owns [cuts[i], cuts[i+1]).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ColumnPartition {
    pub width: usize,
    pub cuts: Vec<usize>,
}

impl ColumnPartition {
    pub fn new(width: usize, cuts: Vec<usize>) -> Result<Self> {
        let p = ColumnPartition { width, cuts };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::InvalidParams("partition width is zero".into()));
        }
        if self.cuts.is_empty() {
            return Err(Error::InvalidParams("partition has no parties".into()));
        }
        if self.cuts[0] != 0 {
            return Err(Error::InvalidParams(format!(
                "first cut must be 0, got {}",
                self.cuts[0]
            )));
        }
        for w in self.cuts.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidParams(format!(
                    "cuts must increase strictly: {} then {}",
                    w[0], w[1]
                )));
            }
        }
        let last = *self.cuts.last().unwrap();
        if last >= self.width {
            return Err(Error::InvalidParams(format!(
                "last cut {last} leaves party {} no columns (width {})",
                self.cuts.len() - 1,
                self.width
            )));
        }
        Ok(())
    }

    pub fn n_parties(&self) -> usize {
        self.cuts.len()
    }

    /// Column span owned by `party`.
    pub fn range(&self, party: usize) -> Result<std::ops::Range<usize>> {
        if party >= self.cuts.len() {
            return Err(Error::InvalidParams(format!(
                "party {party} out of range ({} parties)",
                self.cuts.len()
            )));
        }
        let start = self.cuts[party];
        let end = if party + 1 < self.cuts.len() {
            self.cuts[party + 1]
        } else {
            self.width
        };
        Ok(start..end)
    }
}

/// Slot assignment for a rows x cols matrix: entry (r, c) of copy k sits at
/// slot k*gap*rows*cols + (r*cols + c)*gap. gap spreads entries out;
/// replication repeats the whole tile.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PackLayout {
    pub rows: usize,
    pub cols: usize,
    pub gap: usize,
    pub replication: usize,
    pub slots: usize,
}

impl PackLayout {
    pub fn new(
        rows: usize,
        cols: usize,
        gap: usize,
        replication: usize,
        slots: usize,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || gap == 0 || replication == 0 {
            return Err(Error::InvalidParams(
                "layout dimensions must be positive".into(),
            ));
        }
        let need = rows
            .checked_mul(cols)
            .and_then(|v| v.checked_mul(gap))
            .and_then(|v| v.checked_mul(replication))
            .ok_or_else(|| Error::InvalidParams("layout size overflows".into()))?;
        if need > slots {
            return Err(Error::Capacity { need, have: slots });
        }
        Ok(PackLayout {
            rows,
            cols,
            gap,
            replication,
            slots,
        })
    }

    pub fn slot_index(&self, copy: usize, r: usize, c: usize) -> usize {
        debug_assert!(copy < self.replication && r < self.rows && c < self.cols);
        copy * self.gap * self.rows * self.cols + (r * self.cols + c) * self.gap
    }

    /// Slots one tile occupies (including gap padding).
    pub fn tile_span(&self) -> usize {
        self.rows * self.cols * self.gap
    }
}

/// The tightest layout for a model input: every entry adjacent, one copy.
/// Errors if the matrix simply does not fit the ring.
pub fn layout_for_model(slots: usize, rows: usize, cols: usize) -> Result<PackLayout> {
    PackLayout::new(rows, cols, 1, 1, slots)
}

/// One party's packed contribution: a full slot vector that is zero outside
/// the slots holding that party's columns.
#[derive(Clone, Debug)]
pub struct PackedInput {
    pub layout: PackLayout,
    pub values: Vec<f64>,
    /// Slots this party wrote; disjoint across parties by construction.
    pub owned: Vec<bool>,
}

/// Scatters `data` (rows x party-width, row-major) into the party's slots.
pub fn vpack(
    layout: &PackLayout,
    partition: &ColumnPartition,
    party: usize,
    data: &[f64],
) -> Result<PackedInput> {
    partition.validate()?;
    if partition.width != layout.cols {
        return Err(Error::InvalidParams(format!(
            "partition width {} != layout cols {}",
            partition.width, layout.cols
        )));
    }
    let range = partition.range(party)?;
    let my_width = range.len();
    if data.len() != layout.rows * my_width {
        return Err(Error::InvalidParams(format!(
            "party {party} data has {} entries, expected {} ({} rows x {} cols)",
            data.len(),
            layout.rows * my_width,
            layout.rows,
            my_width
        )));
    }
    let mut values = vec![0.0; layout.slots];
    let mut owned = vec![false; layout.slots];
    for r in 0..layout.rows {
        for (j, c) in range.clone().enumerate() {
            let v = data[r * my_width + j];
            for copy in 0..layout.replication {
                let idx = layout.slot_index(copy, r, c);
                values[idx] = v;
                owned[idx] = true;
            }
        }
    }
    Ok(PackedInput {
        layout: *layout,
        values,
        owned,
    })
}

/// Reads the first copy back out of a slot vector as a row-major matrix.
pub fn unpack(layout: &PackLayout, slot_values: &[f64]) -> Result<Vec<f64>> {
    if slot_values.len() != layout.slots {
        return Err(Error::InvalidParams(format!(
            "slot vector has {} entries, layout expects {}",
            slot_values.len(),
            layout.slots
        )));
    }
    let mut out = Vec::with_capacity(layout.rows * layout.cols);
    for r in 0..layout.rows {
        for c in 0..layout.cols {
            out.push(slot_values[layout.slot_index(0, r, c)]);
        }
    }
    Ok(out)
}

/// Sums packed contributions, verifying the supports are disjoint. This is
/// the plaintext mirror of encrypted concatenation.
pub fn merge_packed(parts: &[PackedInput]) -> Result<PackedInput> {
    if parts.is_empty() {
        return Err(Error::InvalidParams("nothing to merge".into()));
    }
    let layout = parts[0].layout;
    let mut values = vec![0.0; layout.slots];
    let mut owned = vec![false; layout.slots];
    for p in parts {
        if p.layout != layout {
            return Err(Error::InvalidParams("mismatched layouts in merge".into()));
        }
        for (i, (&v, &o)) in p.values.iter().zip(&p.owned).enumerate() {
            if o {
                if owned[i] {
                    return Err(Error::InvalidParams(format!(
                        "slot {i} written by two parties"
                    )));
                }
                owned[i] = true;
                values[i] = v;
            }
        }
    }
    Ok(PackedInput {
        layout,
        values,
        owned,
    })
}
