//! Significance scoring, top-l extraction and Drop-and-Restore bookkeeping.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Attention mass each position receives: the column sum over every head and
/// every query row of `attention: [heads, n, n]`.
pub fn significance_scores(attention: &Tensor) -> Result<Vec<f64>> {
    let (heads, n) = match attention.shape() {
        [h, q, k] if q == k => (*h, *k),
        s => {
            return Err(Error::Shape {
                op: "significance_scores",
                lhs: s.to_vec(),
                rhs: vec![],
            })
        }
    };
    let mut scores = vec![0.0; n];
    for row in attention.data().chunks(n).take(heads * n) {
        for (s, a) in scores.iter_mut().zip(row) {
            *s += a;
        }
    }
    Ok(scores)
}

/// Row indices kept and dropped by top-`keep` selection, both ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Selection {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
}

/// Keeps the `keep` highest-scoring rows. Protected rows are always kept; ties
/// go to the lower index.
pub fn select_top(scores: &[f64], keep: usize, protected: &[usize]) -> Result<Selection> {
    let n = scores.len();
    if keep == 0 || keep > n {
        return Err(Error::contract(format!(
            "cannot keep {keep} of {n} word vectors"
        )));
    }
    if let Some(&p) = protected.iter().find(|&&p| p >= n) {
        return Err(Error::contract(format!(
            "protected row {p} out of range for {n} rows"
        )));
    }
    let mut is_protected = vec![false; n];
    for &p in protected {
        is_protected[p] = true;
    }
    let n_protected = is_protected.iter().filter(|&&b| b).count();
    if keep < n_protected {
        return Err(Error::contract(format!(
            "keeping {keep} vectors cannot cover {n_protected} protected positions"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        is_protected[b]
            .cmp(&is_protected[a])
            .then_with(|| scores[b].total_cmp(&scores[a]))
            .then(a.cmp(&b))
    });
    let mut keep_mask = vec![false; n];
    for &i in &order[..keep] {
        keep_mask[i] = true;
    }
    let (kept, dropped): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| keep_mask[i]);
    Ok(Selection { kept, dropped })
}

/// A dropped word vector: row `row` of tape tensor `source`, set aside at `layer`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StashSlot {
    pub position: usize,
    pub layer: usize,
    pub source: Var,
    pub row: usize,
}

/// Result of extracting the top word vectors from one layer's hidden states.
#[derive(Clone, Debug)]
pub struct Extracted {
    pub hidden: Var,
    pub positions: Vec<usize>,
    pub dropped: Vec<StashSlot>,
}

/// Keeps the `keep` most significant rows of `hidden: [n, H]` whose original
/// positions are `positions`. `protected_positions` are original positions
/// that must survive. Dropped rows become stash slots pointing into `hidden`.
pub fn extract_top(
    tape: &mut Tape,
    hidden: Var,
    positions: &[usize],
    scores: &[f64],
    keep: usize,
    protected_positions: &[usize],
    layer: usize,
) -> Result<Extracted> {
    if positions.len() != tape.value(hidden).rows() || scores.len() != positions.len() {
        return Err(Error::contract(
            "hidden rows, positions and scores disagree in length",
        ));
    }
    let mut protected_rows = Vec::with_capacity(protected_positions.len());
    for p in protected_positions {
        match positions.iter().position(|q| q == p) {
            Some(r) => protected_rows.push(r),
            None => {
                return Err(Error::contract(format!(
                    "protected position {p} is not among the current positions"
                )))
            }
        }
    }
    let sel = select_top(scores, keep, &protected_rows)?;
    let dropped = sel
        .dropped
        .iter()
        .map(|&r| StashSlot {
            position: positions[r],
            layer,
            source: hidden,
            row: r,
        })
        .collect();
    let kept_hidden = if sel.dropped.is_empty() {
        hidden
    } else {
        tape.gather_rows(hidden, &sel.kept)?
    };
    Ok(Extracted {
        hidden: kept_hidden,
        positions: sel.kept.iter().map(|&r| positions[r]).collect(),
        dropped,
    })
}

/// Puts stashed vectors back at their original positions next to the final
/// layer's retained vectors, giving one row per real position in input order.
pub fn restore(
    tape: &mut Tape,
    final_hidden: Var,
    kept_positions: &[usize],
    stash: &[StashSlot],
    n_real: usize,
) -> Result<Var> {
    if kept_positions.len() != tape.value(final_hidden).rows() {
        return Err(Error::contract(
            "kept positions do not match the final hidden rows",
        ));
    }
    let mut owner: Vec<Option<(Var, usize)>> = vec![None; n_real];
    let mut claim = |pos: usize, src: (Var, usize)| -> Result<()> {
        match owner.get_mut(pos) {
            None => Err(Error::contract(format!(
                "position {pos} outside 0..{n_real}"
            ))),
            Some(Some(_)) => Err(Error::contract(format!("position {pos} restored twice"))),
            Some(slot) => {
                *slot = Some(src);
                Ok(())
            }
        }
    };
    for (r, &p) in kept_positions.iter().enumerate() {
        claim(p, (final_hidden, r))?;
    }
    for s in stash {
        claim(s.position, (s.source, s.row))?;
    }
    let sources: Vec<(Var, usize)> = owner
        .into_iter()
        .enumerate()
        .map(|(p, o)| {
            o.ok_or_else(|| Error::contract(format!("position {p} missing from restore")))
        })
        .collect::<Result<_>>()?;
    let identity = sources
        .iter()
        .enumerate()
        .all(|(i, &(v, r))| v == final_hidden && r == i);
    if identity {
        return Ok(final_hidden);
    }
    tape.assemble_rows(&sources)
}

/// Per-layer record of what a forward pass did.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerTrace {
    /// Skipped by LayerDrop: no attention, no extraction.
    pub skipped: bool,
    /// Word vectors entering the layer's self-attention.
    pub input_len: usize,
    /// `[heads, n_in, n_in]`; absent for skipped layers.
    pub attention: Option<Tensor>,
    pub scores: Vec<f64>,
    /// Original positions retained after extraction, ascending.
    pub kept: Vec<usize>,
    /// Original positions set aside at this layer, ascending.
    pub dropped: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StashEntry {
    pub position: usize,
    pub layer: usize,
    /// Post-attention residual-stream value at drop time.
    pub vector: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ForwardTrace {
    pub n_real: usize,
    pub layers: Vec<LayerTrace>,
    pub stash: Vec<StashEntry>,
}

impl ForwardTrace {
    /// Retained count after each layer.
    pub fn effective_lengths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.kept.len()).collect()
    }

    /// Self-attention input length per layer (skipped layers included).
    pub fn attention_input_lengths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.input_len).collect()
    }

    pub fn final_kept(&self) -> Vec<usize> {
        match self.layers.last() {
            Some(l) => l.kept.clone(),
            None => (0..self.n_real).collect(),
        }
    }

    /// Stash vector for `position`, if it was dropped.
    pub fn stashed(&self, position: usize) -> Option<&StashEntry> {
        self.stash.iter().find(|e| e.position == position)
    }
}
