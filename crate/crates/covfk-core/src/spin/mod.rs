//! Spinors on the round sphere: Clifford multiplication, the Dirac operator,
//! and the first components of the stochastic Chern character.

pub mod bundle;
pub mod chern;
pub mod clifford;
pub mod dirac;
pub mod forms;
pub mod truncation;

pub use bundle::spinor_bundle;
pub use chern::{
    build_ft, build_ft_pair, chern_n0, chern_n1, chern_n1_trace_formula, ChernSetup, IntegralForm,
    LoopForm, LoopFormSpec,
};
pub use clifford::{clifford, gamma, grading, supertrace, CliffordConvention};
pub use dirac::{DiracStencil, SpinorField};
pub use forms::{FlatForm, FormAt, FormField, FormSpec, MixedForm, Poly3, TrigPoly2};
pub use truncation::DiracTruncation;
