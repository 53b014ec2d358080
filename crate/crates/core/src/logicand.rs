//! Asynchronous distributed logic-AND over stop matrices.
//!
//! Node `i` keeps a binary `d_G x d_i` matrix. Column `c < d_i - 1` mirrors the
//! last broadcast column of the `c`-th neighbor (neighbors sorted by id), the
//! last column is the node's own. Row 0 of the own column holds the local
//! flag; row `l` of the own column is the product of row `l - 1` across the
//! whole matrix. A node whose last row is all ones knows that every flag in
//! the network is set.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopMatrix {
    rows: usize,
    neighbors: Vec<usize>,
    // row-major, rows x (neighbors.len() + 1)
    entries: Vec<bool>,
}

impl StopMatrix {
    /// All-zero matrix with `rows = d_G` rows; `neighbors` must be sorted.
    pub fn new(rows: usize, neighbors: &[usize]) -> Self {
        assert!(rows >= 1, "stop matrix needs at least one row");
        debug_assert!(neighbors.windows(2).all(|w| w[0] < w[1]));
        StopMatrix {
            rows,
            neighbors: neighbors.to_vec(),
            entries: vec![false; rows * (neighbors.len() + 1)],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.neighbors.len() + 1
    }

    fn own_col(&self) -> usize {
        self.neighbors.len()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.entries[row * self.cols() + col]
    }

    fn set(&mut self, row: usize, col: usize, value: bool) {
        let cols = self.cols();
        self.entries[row * cols + col] = value;
    }

    /// Column assigned to neighbor `j`.
    pub fn column_of(&self, j: usize) -> Option<usize> {
        self.neighbors.binary_search(&j).ok()
    }

    fn row_product(&self, row: usize) -> bool {
        (0..self.cols()).all(|c| self.get(row, c))
    }

    pub fn own_column(&self) -> Vec<bool> {
        (0..self.rows).map(|l| self.get(l, self.own_col())).collect()
    }

    pub fn own_flag(&self) -> bool {
        self.get(0, self.own_col())
    }

    pub fn set_own_flag(&mut self, flag: bool) {
        let own = self.own_col();
        self.set(0, own, flag);
    }

    /// Recomputes rows `1..d_G` of the own column from the row above.
    pub fn propagate(&mut self) {
        let own = self.own_col();
        for l in 1..self.rows {
            let p = self.row_product(l - 1);
            self.set(l, own, p);
        }
    }

    /// Copies a neighbor's broadcast column into its slot.
    pub fn set_column(&mut self, from: usize, column: &[bool]) -> Result<()> {
        let col = self.column_of(from).ok_or(Error::UnknownNeighbor {
            node: usize::MAX,
            neighbor: from,
        })?;
        if column.len() != self.rows {
            return Err(Error::Dimension {
                expected: self.rows,
                got: column.len(),
            });
        }
        for (l, &v) in column.iter().enumerate() {
            self.set(l, col, v);
        }
        Ok(())
    }

    pub fn fill_last_row(&mut self) {
        let last = self.rows - 1;
        for c in 0..self.cols() {
            self.set(last, c, true);
        }
    }

    /// Stop condition: product over the last row equals one.
    pub fn last_row_all_ones(&self) -> bool {
        self.row_product(self.rows - 1)
    }

    pub fn reset(&mut self) {
        self.entries.fill(false);
    }

    /// Whether the own column satisfies the row recursion.
    pub fn recursion_consistent(&self) -> bool {
        (1..self.rows).all(|l| self.get(l, self.own_col()) == self.row_product(l - 1))
    }
}

/// What an awake step sends to all neighbors.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AwakeOutcome {
    /// Own column broadcast, if the matrix was updated.
    pub column: Option<Vec<bool>>,
    /// The node detected the all-ones condition and signals STOP.
    pub stop: bool,
}

/// Standalone logic-AND participant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogicAndState {
    pub node: usize,
    pub matrix: StopMatrix,
    pub flag: bool,
    pub stopped: bool,
    stop_received: bool,
}

impl LogicAndState {
    pub fn new(node: usize, diameter: usize, neighbors: &[usize]) -> Self {
        LogicAndState {
            node,
            matrix: StopMatrix::new(diameter, neighbors),
            flag: false,
            stopped: false,
            stop_received: false,
        }
    }

    /// Flags are monotone: once raised they stay raised.
    pub fn raise_flag(&mut self) {
        self.flag = true;
    }

    /// One awakening: refresh and broadcast the own column unless the last
    /// row is already complete, then stop (and signal STOP) if it is.
    pub fn awake(&mut self) -> AwakeOutcome {
        if self.stopped {
            return AwakeOutcome::default();
        }
        let mut out = AwakeOutcome::default();
        if !self.matrix.last_row_all_ones() {
            self.matrix.set_own_flag(self.flag);
            self.matrix.propagate();
            out.column = Some(self.matrix.own_column());
        }
        if self.matrix.last_row_all_ones() {
            self.stopped = true;
            out.stop = true;
        }
        out
    }

    /// Stores a neighbor's column; ignored once a STOP has been received.
    pub fn receive_column(&mut self, from: usize, column: &[bool]) -> Result<()> {
        if self.matrix.column_of(from).is_none() {
            return Err(Error::UnknownNeighbor {
                node: self.node,
                neighbor: from,
            });
        }
        if self.stop_received {
            return Ok(());
        }
        self.matrix.set_column(from, column)
    }

    pub fn receive_stop(&mut self) {
        self.stop_received = true;
        self.matrix.fill_last_row();
    }

    pub fn stop_received(&self) -> bool {
        self.stop_received
    }
}
