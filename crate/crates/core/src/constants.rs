//! Exact SI defining constants and the few atomic data the toolkit needs.

/// Planck constant, J s.
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Reduced Planck constant, J s.
pub const HBAR: f64 = PLANCK / (2.0 * std::f64::consts::PI);
/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Boltzmann constant, J/K.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Atomic mass constant, kg (CODATA 2018).
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;
/// Electron mass, kg (CODATA 2018).
pub const ELECTRON_MASS: f64 = 9.109_383_701_5e-31;

/// Atomic mass of 174Yb in u.
pub const YB174_ATOMIC_MASS_U: f64 = 173.938_866_4;
/// Vacuum wavelength of the 2S1/2 - 2P1/2 line of Yb+, m.
pub const YB_COOLING_WAVELENGTH: f64 = 369.5e-9;
/// Natural linewidth Gamma/2pi of the Yb+ cooling line, Hz.
pub const YB_COOLING_LINEWIDTH_HZ: f64 = 19.6e6;

/// Mass of a singly charged 174Yb ion, kg.
pub fn yb174_ion_mass() -> f64 {
    YB174_ATOMIC_MASS_U * ATOMIC_MASS_UNIT - ELECTRON_MASS
}
