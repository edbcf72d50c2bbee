//! The list-sorting environment: a padded digit list plus two pointer
//! tracks, the five canonical operations in exact symbolic form, the
//! finality test, and the expert trace generator.
//!
//! States double as network inputs/outputs: tracks hold arbitrary reals
//! in `[0, 1]`, with one-hot rows and 0/1 pointers as the exact special
//! case the symbolic operators require.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of a digit row (digits 0-9, one-hot).
pub const DIGIT_DIM: usize = 10;
/// Width of a merged state row: digit row plus both pointer scalars.
pub const STATE_DIM: usize = DIGIT_DIM + 2;

/// The five canonical operations, in selection-vector order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpSymbol {
    Mova,
    Movb,
    Retb,
    Swap,
    Eop,
}

impl OpSymbol {
    pub const ALL: [OpSymbol; 5] = [
        OpSymbol::Mova,
        OpSymbol::Movb,
        OpSymbol::Retb,
        OpSymbol::Swap,
        OpSymbol::Eop,
    ];

    /// Position in the selection vector.
    pub fn index(self) -> usize {
        match self {
            OpSymbol::Mova => 0,
            OpSymbol::Movb => 1,
            OpSymbol::Retb => 2,
            OpSymbol::Swap => 3,
            OpSymbol::Eop => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<OpSymbol> {
        OpSymbol::ALL.get(i).copied()
    }
}

impl std::fmt::Display for OpSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OpSymbol::Mova => "mova",
            OpSymbol::Movb => "movb",
            OpSymbol::Retb => "retb",
            OpSymbol::Swap => "swap",
            OpSymbol::Eop => "eop",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("list must have at least 2 digits, got {0}")]
    ListTooShort(usize),
    #[error("digit {0} outside 0..=9")]
    DigitOutOfRange(u8),
    #[error("padded width {pad} smaller than list length {len}")]
    PadTooSmall { len: usize, pad: usize },
    #[error("{op}: pointer move past the last list position")]
    MoveOutOfRange { op: OpSymbol },
    #[error("state is not symbolic: {0} track has no exact one-hot position")]
    MalformedPointer(&'static str),
}

/// Environment representation: `width()` positions of digit rows plus
/// the two pointer tracks, with a logical list length `len()` after
/// which rows are null padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    list: Vec<[f64; DIGIT_DIM]>,
    ptr_a: Vec<f64>,
    ptr_b: Vec<f64>,
    len: usize,
}

impl EnvState {
    /// Padded width N shared by all three tracks.
    pub fn width(&self) -> usize {
        self.list.len()
    }

    /// Logical list length L.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn list(&self) -> &[[f64; DIGIT_DIM]] {
        &self.list
    }

    pub fn ptr_a(&self) -> &[f64] {
        &self.ptr_a
    }

    pub fn ptr_b(&self) -> &[f64] {
        &self.ptr_b
    }

    /// Replaces the list track. Used by the swap operator's update
    /// submodule; the other tracks stay untouched.
    pub fn with_list(&self, list: Vec<[f64; DIGIT_DIM]>) -> EnvState {
        assert_eq!(list.len(), self.width());
        EnvState {
            list,
            ptr_a: self.ptr_a.clone(),
            ptr_b: self.ptr_b.clone(),
            len: self.len,
        }
    }

    pub fn with_ptr_a(&self, ptr_a: Vec<f64>) -> EnvState {
        assert_eq!(ptr_a.len(), self.width());
        EnvState {
            list: self.list.clone(),
            ptr_a,
            ptr_b: self.ptr_b.clone(),
            len: self.len,
        }
    }

    pub fn with_ptr_b(&self, ptr_b: Vec<f64>) -> EnvState {
        assert_eq!(ptr_b.len(), self.width());
        EnvState {
            list: self.list.clone(),
            ptr_a: self.ptr_a.clone(),
            ptr_b,
            len: self.len,
        }
    }

    /// Position-major merged rows `(digit row ++ a ++ b)`, the input
    /// layout of the swap kernel and the digestor.
    pub fn merged_rows(&self) -> Vec<[f64; STATE_DIM]> {
        (0..self.width())
            .map(|i| {
                let mut row = [0.0; STATE_DIM];
                row[..DIGIT_DIM].copy_from_slice(&self.list[i]);
                row[DIGIT_DIM] = self.ptr_a[i];
                row[DIGIT_DIM + 1] = self.ptr_b[i];
                row
            })
            .collect()
    }

    /// Exact position of a symbolic pointer track: the single 1.0 entry
    /// with all others 0.0.
    fn symbolic_pos(track: &[f64]) -> Option<usize> {
        let mut pos = None;
        for (i, &v) in track.iter().enumerate() {
            if v == 1.0 {
                if pos.is_some() {
                    return None;
                }
                pos = Some(i);
            } else if v != 0.0 {
                return None;
            }
        }
        pos
    }

    pub fn pos_a(&self) -> Option<usize> {
        Self::symbolic_pos(&self.ptr_a)
    }

    pub fn pos_b(&self) -> Option<usize> {
        Self::symbolic_pos(&self.ptr_b)
    }

    /// Pointer decoding rule for continuous tracks: present where the
    /// value exceeds 0.5; valid only if exactly one position qualifies.
    pub fn decode_pointer(track: &[f64]) -> Option<usize> {
        let mut pos = None;
        for (i, &v) in track.iter().enumerate() {
            if v > 0.5 {
                if pos.is_some() {
                    return None;
                }
                pos = Some(i);
            }
        }
        pos
    }
}

fn one_hot(digit: u8) -> [f64; DIGIT_DIM] {
    let mut row = [0.0; DIGIT_DIM];
    row[digit as usize] = 1.0;
    row
}

fn unit_track(width: usize, pos: usize) -> Vec<f64> {
    let mut t = vec![0.0; width];
    t[pos] = 1.0;
    t
}

/// Encodes a digit list into the initial environment state: one-hot
/// rows, null padding out to `pad_to`, pointer A on the first digit and
/// B on the second.
pub fn encode_list(digits: &[u8], pad_to: usize) -> Result<EnvState, EnvError> {
    if digits.len() < 2 {
        return Err(EnvError::ListTooShort(digits.len()));
    }
    if pad_to < digits.len() {
        return Err(EnvError::PadTooSmall {
            len: digits.len(),
            pad: pad_to,
        });
    }
    if let Some(&d) = digits.iter().find(|&&d| d > 9) {
        return Err(EnvError::DigitOutOfRange(d));
    }
    let mut list = vec![[0.0; DIGIT_DIM]; pad_to];
    for (row, &d) in list.iter_mut().zip(digits) {
        *row = one_hot(d);
    }
    Ok(EnvState {
        list,
        ptr_a: unit_track(pad_to, 0),
        ptr_b: unit_track(pad_to, 1),
        len: digits.len(),
    })
}

/// Decodes each list row: `None` when all ten values sit below 0.5,
/// otherwise the argmax digit (lowest index wins ties).
pub fn decode_list(state: &EnvState) -> Vec<Option<u8>> {
    state
        .list
        .iter()
        .map(|row| {
            if row.iter().all(|&v| v < 0.5) {
                None
            } else {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                Some(best as u8)
            }
        })
        .collect()
}

/// Applies one canonical operation to a symbolic state, returning a
/// fresh state. Move targets must stay within the logical length.
pub fn symbolic_apply(op: OpSymbol, state: &EnvState) -> Result<EnvState, EnvError> {
    match op {
        OpSymbol::Eop => Ok(state.clone()),
        OpSymbol::Mova => {
            let a = state.pos_a().ok_or(EnvError::MalformedPointer("ptr_a"))?;
            if a + 1 >= state.len {
                return Err(EnvError::MoveOutOfRange { op });
            }
            Ok(state.with_ptr_a(unit_track(state.width(), a + 1)))
        }
        OpSymbol::Movb => {
            let b = state.pos_b().ok_or(EnvError::MalformedPointer("ptr_b"))?;
            if b + 1 >= state.len {
                return Err(EnvError::MoveOutOfRange { op });
            }
            Ok(state.with_ptr_b(unit_track(state.width(), b + 1)))
        }
        OpSymbol::Retb => {
            let a = state.pos_a().ok_or(EnvError::MalformedPointer("ptr_a"))?;
            if a + 1 >= state.len {
                return Err(EnvError::MoveOutOfRange { op });
            }
            Ok(state.with_ptr_b(unit_track(state.width(), a + 1)))
        }
        OpSymbol::Swap => {
            let a = state.pos_a().ok_or(EnvError::MalformedPointer("ptr_a"))?;
            let b = state.pos_b().ok_or(EnvError::MalformedPointer("ptr_b"))?;
            let mut list = state.list.clone();
            list.swap(a, b);
            Ok(state.with_list(list))
        }
    }
}

/// True iff both pointers sit on the last logical position.
pub fn is_final(state: &EnvState) -> bool {
    match (state.pos_a(), state.pos_b()) {
        (Some(a), Some(b)) => a == state.len - 1 && b == state.len - 1,
        _ => false,
    }
}

/// Expert execution: the operation emitted at each step plus every
/// intermediate state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub initial: EnvState,
    pub steps: Vec<(OpSymbol, EnvState)>,
}

impl Trace {
    pub fn ops(&self) -> impl Iterator<Item = OpSymbol> + '_ {
        self.steps.iter().map(|(op, _)| *op)
    }

    pub fn final_state(&self) -> &EnvState {
        &self.steps.last().expect("traces are never empty").1
    }

    /// Number of perception-action steps (EOP included).
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    /// The state observed before step `i`.
    pub fn state_before(&self, i: usize) -> &EnvState {
        if i == 0 {
            &self.initial
        } else {
            &self.steps[i - 1].1
        }
    }
}

/// Generates the expert selection-sort trace for `digits`, padded to
/// `pad_to` positions.
///
/// Schedule: for each outer position `a`, walk `b` right across
/// `a+1..=L-1`, swapping whenever the digit at `b` is strictly smaller
/// than the digit at `a`; advance `a`, return `b` beside it unless the
/// outer loop is done, and finish with EOP.
pub fn generate_trace(digits: &[u8], pad_to: usize) -> Result<Trace, EnvError> {
    let initial = encode_list(digits, pad_to)?;
    let l = digits.len();
    let mut work = digits.to_vec();
    let mut cur = initial.clone();
    let mut steps = Vec::new();

    let emit = |op: OpSymbol, cur: &mut EnvState, steps: &mut Vec<(OpSymbol, EnvState)>| {
        let next = symbolic_apply(op, cur).expect("expert schedule stays in range");
        steps.push((op, next.clone()));
        *cur = next;
    };

    for a in 0..=l - 2 {
        for b in a + 1..=l - 1 {
            if work[b] < work[a] {
                work.swap(a, b);
                emit(OpSymbol::Swap, &mut cur, &mut steps);
            }
            if b < l - 1 {
                emit(OpSymbol::Movb, &mut cur, &mut steps);
            }
        }
        emit(OpSymbol::Mova, &mut cur, &mut steps);
        if a < l - 2 {
            emit(OpSymbol::Retb, &mut cur, &mut steps);
        }
    }
    emit(OpSymbol::Eop, &mut cur, &mut steps);

    Ok(Trace { initial, steps })
}

/// JSON-lines record of a trace: digits, padded width, op symbols, and
/// optionally the decoded intermediate lists.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRecord {
    pub digits: Vec<u8>,
    pub padded_len: usize,
    pub ops: Vec<OpSymbol>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<Vec<Option<u8>>>>,
}

impl TraceRecord {
    pub fn from_trace(digits: &[u8], trace: &Trace, include_states: bool) -> Self {
        TraceRecord {
            digits: digits.to_vec(),
            padded_len: trace.initial.width(),
            ops: trace.ops().collect(),
            states: include_states
                .then(|| trace.steps.iter().map(|(_, s)| decode_list(s)).collect()),
        }
    }
}
