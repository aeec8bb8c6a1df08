//! Source signal synthesis: the microfluidic impedance readout and the
//! physiological (GSR) signal.

pub mod cytometry;
pub mod gsr;
pub mod lowpass;

pub use cytometry::{
    bead_arrivals, gen_impedance_envelope, lock_in_chain, synthesize_readout, transit_time_s,
    CytometryParams, LockIn, PulsePolarity,
};
pub use gsr::{gen_gsr, GsrParams, PhasicEvent};
pub use lowpass::ButterworthLowpass;
