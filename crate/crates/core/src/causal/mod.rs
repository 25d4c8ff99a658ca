//! Causal diagrams: DAG representation, d-separation, the back-door
//! criterion, and an exact discrete back-door adjustment oracle.

mod dag;
mod diagrams;
mod dsep;
mod io;
mod scm;

pub use dag::{CausalError, Dag};
pub use diagrams::builtin_diagrams;
pub use scm::{Cpt, DiscreteScm};
