//! Device parameters, closed-form rates and the three dynamical models
//! (full three-mode, reduced buffer-qubit, reset).

mod models;
mod params;
mod rates;

pub use models::{
    adiabatic_equivalence_check, adiabatic_equivalence_check_with, buffer_pulse, build_full_model, build_full_model_pumped,
    build_reduced_model, build_reset_model, build_reset_model_hamiltonian_form, pump_envelope, run_with_observables,
    AdiabaticReport, ReducedOptions,
};
pub use params::{CircuitParams, DeviceConfig, Microscopic, PurcellParams, BUNDLED_DEVICE_JSON};
pub use rates::{
    chi_from_circuit, efficiency, epsilon_w_for_reset, nonlinear_rate, pump_frequency, purcell_rates, reset_rate,
    spurious_pump_frequency, three_wave_rate, ChiSet, DerivedRates, PumpFrequency,
};
