//! Decay fits, perturbation theory of moment operators, and bound calculators.

pub mod bounds;
pub mod fit;
pub mod moments;
pub mod perturbation;
pub mod signal;

pub use bounds::{
    c_lambda, default_m_min, design_relative_sequence_length, design_sequence_length, g_factor,
    sampling_bound_additive, sampling_bound_relative, sequence_length_bound, sequence_length_exact,
    sequence_length_linearized, sequence_length_relative_lemma, subdominant_bound, table_one, LemmaInputs,
    RelativeSampling, SequenceLengthBound, SequenceMode, TableRow,
};
pub use fit::{fit_decay, fit_exponential, fit_series, DecayFit, Offset};
pub use moments::{
    ideal_second_moment, second_moment_blocks, second_moment_bounds, spam_second_moment, SecondMomentBlocks,
};
pub use perturbation::{perturb_block_diagonalize, BoundCheck, PerturbationResult};
pub use signal::{signal_decomposition, SignalDecomposition, SignalSummary};
